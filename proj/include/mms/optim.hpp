#pragma once

#include "mms/abi.hpp"

#include <span>

#include "mms/tensor.hpp"

MMS_BEGIN_NAMESPACE

// In place: p <- p - lr * (g + weight_decay * p).
void sgd_step(std::span<Scalar> params, std::span<const Scalar> grads, Scalar lr,
              Scalar weight_decay);

// Step decay: base * gamma^(floor(epoch / period)).
double step_decay_lr(double base, double gamma, std::size_t period, std::size_t epoch);

MMS_END_NAMESPACE
