#include "mms/optim.hpp"

#include <cmath>

#include "mms/error.hpp"

MMS_BEGIN_NAMESPACE

void sgd_step(std::span<Scalar> params, std::span<const Scalar> grads, Scalar lr,
              Scalar weight_decay) {
  if (params.size() != grads.size()) {
    throw DimensionError("sgd_step: " + std::to_string(params.size()) + " params vs " +
                         std::to_string(grads.size()) + " grads");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i] -= lr * (grads[i] + weight_decay * params[i]);
  }
}

double step_decay_lr(double base, double gamma, std::size_t period, std::size_t epoch) {
  if (period == 0) return base;
  return base * std::pow(gamma, static_cast<double>(epoch / period));
}

MMS_END_NAMESPACE
