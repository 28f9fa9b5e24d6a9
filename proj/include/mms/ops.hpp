#pragma once

#include "mms/abi.hpp"

#include <cstddef>

#include "mms/tape.hpp"

// Differentiable operations recorded on a Tape. Every op validates shapes up
// front and throws DimensionError on mismatch.
MMS_BEGIN_NAMESPACE
namespace ops {

// input [N,C,H,W], kernel [F,C,kH,kW], bias [F] -> [N,F,H',W'].
// Throws ConfigError when (H + 2*padding - kH) is not divisible by stride.
Var conv2d(Tape& tape, Var input, Var kernel, Var bias, std::size_t stride = 1,
           std::size_t padding = 0);

// Per-(n,c)-plane normalisation without running statistics.
// Throws DimensionError when a plane has fewer than two pixels.
Var instance_norm(Tape& tape, Var input, Var gain, Var shift, Scalar eps = Scalar(1e-5));

Var relu(Tape& tape, Var x);
Var sigmoid(Tape& tape, Var x);
Var add(Tape& tape, Var a, Var b);
Var sub(Tape& tape, Var a, Var b);
Var mul(Tape& tape, Var a, Var b);
Var div(Tape& tape, Var a, Var b);
Var scale(Tape& tape, Var x, Scalar factor);
Var add_scalar(Tape& tape, Var x, Scalar offset);
// Throws NumericError on any non-positive input.
Var log(Tape& tape, Var x);
// Gradient passes only where lo <= x <= hi.
Var clamp(Tape& tape, Var x, Scalar lo, Scalar hi);
// x^p for x >= 0; the gradient at x == 0 is taken as 0.
Var pow_scalar(Tape& tape, Var x, Scalar p);
// Full reductions to a one-element tensor.
Var sum(Tape& tape, Var x);
Var mean(Tape& tape, Var x);

// 2x2 max pooling with stride 2. Ties go to the first element in row-major order.
Var maxpool2(Tape& tape, Var input);
// Nearest-neighbour 2x upsampling.
Var upsample2(Tape& tape, Var input);
// [N,Ca,H,W] ++ [N,Cb,H,W] -> [N,Ca+Cb,H,W].
Var concat_channels(Tape& tape, Var a, Var b);

}  // namespace ops
MMS_END_NAMESPACE
