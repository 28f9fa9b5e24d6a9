#pragma once

#include "mms/abi.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mms/tape.hpp"
#include "mms/tensor.hpp"

MMS_BEGIN_NAMESPACE

// U-Net layout: `depth` encoder levels of width base_width * 2^i, a bottleneck
// of width base_width * 2^depth, mirrored decoder levels fed by nearest
// upsampling + skip concatenation, and a 1x1 output conv with sigmoid.
// Every level is two (3x3 conv -> instance norm -> ReLU) blocks.
struct ArchDescriptor {
  std::uint32_t input_channels = 1;
  std::uint32_t base_width = 8;
  std::uint32_t depth = 3;
  std::uint32_t output_channels = 1;

  // Throws ConfigError.
  void validate() const;
  std::size_t param_count() const;
  std::string to_string() const;

  bool operator==(const ArchDescriptor&) const = default;
};

enum class LayerKind { Conv, Norm };

// One parameterised layer; tensors are laid out in table order.
struct LayerSpec {
  LayerKind kind;
  std::size_t in_channels;
  std::size_t out_channels;
  std::size_t kernel;  // conv only
  // Conv: [kernel weights, bias]. Norm: [gain, shift].
  std::size_t first_tensor;
};

std::vector<LayerSpec> layer_table(const ArchDescriptor& arch);
std::vector<Shape> param_shapes(const ArchDescriptor& arch);

// Flat parameter vector for one model (meta-model, task model or fine-tuned model).
class ParamVector {
 public:
  ParamVector() = default;
  // Throws DimensionError when values.size() != arch.param_count().
  ParamVector(ArchDescriptor arch, std::vector<Scalar> values);

  const ArchDescriptor& arch() const noexcept { return arch_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::span<Scalar> values() noexcept { return values_; }
  std::span<const Scalar> values() const noexcept { return values_; }
  Scalar operator[](std::size_t i) const { return values_[i]; }
  Scalar& operator[](std::size_t i) { return values_[i]; }

  bool operator==(const ParamVector&) const = default;

 private:
  ArchDescriptor arch_;
  std::vector<Scalar> values_;
};

std::vector<Tensor> unflatten(const ParamVector& params);
ParamVector flatten(const ArchDescriptor& arch, const std::vector<Tensor>& tensors);

// Deterministic init: conv weights ~ U(-b, b) with b = sqrt(1 / fan_in),
// biases 0, norm gains 1 and shifts 0.
ParamVector build(const ArchDescriptor& arch, std::uint64_t seed);

// Parameters registered on a tape, one Var per tensor in table order.
struct BoundParams {
  ArchDescriptor arch;
  std::vector<Var> tensors;
};

BoundParams bind(Tape& tape, const ParamVector& params, bool requires_grad = true);

// Concatenated gradients of all bound tensors (zeros where none flowed).
std::vector<Scalar> gather_grads(const Tape& tape, const BoundParams& bound);

struct ForwardTrace {
  Var probabilities;
  // Output of the first instance norm, before ReLU.
  Var first_norm;
};

// batch [N, input_channels, H, W] -> probabilities [N, output_channels, H, W].
// Throws DimensionError when H or W is not divisible by 2^depth.
ForwardTrace forward_trace(Tape& tape, const BoundParams& params, Var batch);
Var forward(Tape& tape, const BoundParams& params, Var batch);

// Gradient-free convenience wrapper.
Tensor predict(const ParamVector& params, const Tensor& batch);

MMS_END_NAMESPACE
