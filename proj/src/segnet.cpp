#include "mms/segnet.hpp"

#include <cmath>
#include <sstream>

#include "mms/error.hpp"
#include "mms/ops.hpp"
#include "mms/rng.hpp"

MMS_BEGIN_NAMESPACE
namespace {

constexpr std::size_t kConvKernel = 3;

void push_conv(std::vector<LayerSpec>& table, std::size_t& tensors, std::size_t in,
               std::size_t out, std::size_t kernel) {
  table.push_back({LayerKind::Conv, in, out, kernel, tensors});
  tensors += 2;
}

void push_block(std::vector<LayerSpec>& table, std::size_t& tensors, std::size_t in,
                std::size_t out) {
  push_conv(table, tensors, in, out, kConvKernel);
  table.push_back({LayerKind::Norm, out, out, 0, tensors});
  tensors += 2;
  push_conv(table, tensors, out, out, kConvKernel);
  table.push_back({LayerKind::Norm, out, out, 0, tensors});
  tensors += 2;
}

std::size_t width_at(const ArchDescriptor& arch, std::size_t level) {
  return static_cast<std::size_t>(arch.base_width) << level;
}

}  // namespace

void ArchDescriptor::validate() const {
  if (input_channels == 0 || output_channels == 0 || base_width == 0) {
    throw ConfigError("arch: channel counts must be positive: " + to_string());
  }
  if (depth > 8) throw ConfigError("arch: depth above 8 is not supported: " + to_string());
}

std::string ArchDescriptor::to_string() const {
  std::ostringstream os;
  os << "{in=" << input_channels << ", base=" << base_width << ", depth=" << depth
     << ", out=" << output_channels << "}";
  return os.str();
}

std::vector<LayerSpec> layer_table(const ArchDescriptor& arch) {
  arch.validate();
  std::vector<LayerSpec> table;
  std::size_t tensors = 0;
  std::size_t in = arch.input_channels;
  for (std::size_t level = 0; level < arch.depth; ++level) {
    push_block(table, tensors, in, width_at(arch, level));
    in = width_at(arch, level);
  }
  push_block(table, tensors, in, width_at(arch, arch.depth));
  for (std::size_t level = arch.depth; level-- > 0;) {
    push_block(table, tensors, width_at(arch, level + 1) + width_at(arch, level),
               width_at(arch, level));
  }
  push_conv(table, tensors, width_at(arch, 0), arch.output_channels, 1);
  return table;
}

std::vector<Shape> param_shapes(const ArchDescriptor& arch) {
  std::vector<Shape> shapes;
  for (const LayerSpec& layer : layer_table(arch)) {
    if (layer.kind == LayerKind::Conv) {
      shapes.push_back({layer.out_channels, layer.in_channels, layer.kernel, layer.kernel});
      shapes.push_back({layer.out_channels});
    } else {
      shapes.push_back({layer.out_channels});
      shapes.push_back({layer.out_channels});
    }
  }
  return shapes;
}

std::size_t ArchDescriptor::param_count() const {
  std::size_t total = 0;
  for (const Shape& s : param_shapes(*this)) total += shape_size(s);
  return total;
}

ParamVector::ParamVector(ArchDescriptor arch, std::vector<Scalar> values)
    : arch_(arch), values_(std::move(values)) {
  if (values_.size() != arch_.param_count()) {
    throw DimensionError("parameter vector of length " + std::to_string(values_.size()) +
                         " does not match arch " + arch_.to_string() + " (" +
                         std::to_string(arch_.param_count()) + " parameters)");
  }
}

std::vector<Tensor> unflatten(const ParamVector& params) {
  std::vector<Tensor> tensors;
  std::size_t offset = 0;
  for (const Shape& s : param_shapes(params.arch())) {
    const std::size_t n = shape_size(s);
    std::vector<Scalar> data(params.values().begin() + static_cast<std::ptrdiff_t>(offset),
                             params.values().begin() + static_cast<std::ptrdiff_t>(offset + n));
    tensors.emplace_back(s, std::move(data));
    offset += n;
  }
  return tensors;
}

ParamVector flatten(const ArchDescriptor& arch, const std::vector<Tensor>& tensors) {
  const std::vector<Shape> shapes = param_shapes(arch);
  if (shapes.size() != tensors.size()) {
    throw DimensionError("flatten: expected " + std::to_string(shapes.size()) + " tensors, got " +
                         std::to_string(tensors.size()));
  }
  std::vector<Scalar> values;
  values.reserve(arch.param_count());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].shape() != shapes[i]) {
      throw DimensionError("flatten: tensor " + std::to_string(i) + " has shape " +
                           shape_str(tensors[i].shape()) + ", expected " + shape_str(shapes[i]));
    }
    values.insert(values.end(), tensors[i].data().begin(), tensors[i].data().end());
  }
  return ParamVector(arch, std::move(values));
}

ParamVector build(const ArchDescriptor& arch, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> tensors;
  for (const LayerSpec& layer : layer_table(arch)) {
    if (layer.kind == LayerKind::Conv) {
      Tensor kernel({layer.out_channels, layer.in_channels, layer.kernel, layer.kernel});
      const double fan_in = static_cast<double>(layer.in_channels * layer.kernel * layer.kernel);
      const double bound = std::sqrt(1.0 / fan_in);
      for (Scalar& v : kernel.data()) v = static_cast<Scalar>(rng.uniform(-bound, bound));
      tensors.push_back(std::move(kernel));
      tensors.emplace_back(Shape{layer.out_channels}, Scalar(0));
    } else {
      tensors.emplace_back(Shape{layer.out_channels}, Scalar(1));
      tensors.emplace_back(Shape{layer.out_channels}, Scalar(0));
    }
  }
  return flatten(arch, tensors);
}

BoundParams bind(Tape& tape, const ParamVector& params, bool requires_grad) {
  BoundParams bound{params.arch(), {}};
  for (Tensor& t : unflatten(params)) {
    bound.tensors.push_back(requires_grad ? tape.parameter(std::move(t))
                                          : tape.constant(std::move(t)));
  }
  return bound;
}

std::vector<Scalar> gather_grads(const Tape& tape, const BoundParams& bound) {
  std::vector<Scalar> grads;
  grads.reserve(bound.arch.param_count());
  for (Var v : bound.tensors) {
    const std::vector<Scalar>& g = tape.grad(v);
    if (g.empty()) {
      grads.insert(grads.end(), tape.value(v).size(), Scalar(0));
    } else {
      grads.insert(grads.end(), g.begin(), g.end());
    }
  }
  return grads;
}

ForwardTrace forward_trace(Tape& tape, const BoundParams& params, Var batch) {
  const ArchDescriptor& arch = params.arch;
  const Shape& s = tape.shape(batch);
  if (s.size() != 4 || s[1] != arch.input_channels) {
    throw DimensionError("segnet: input " + shape_str(s) + " does not match arch " +
                         arch.to_string());
  }
  const std::size_t divisor = std::size_t{1} << arch.depth;
  if (s[2] % divisor != 0 || s[3] % divisor != 0) {
    throw DimensionError("segnet: spatial size " + shape_str(s) + " not divisible by " +
                         std::to_string(divisor));
  }

  const std::vector<LayerSpec> table = layer_table(arch);
  std::size_t next = 0;
  ForwardTrace trace{};
  bool first_norm_seen = false;
  auto block = [&](Var x) {
    for (int rep = 0; rep < 2; ++rep) {
      const LayerSpec& conv = table[next++];
      const LayerSpec& norm = table[next++];
      x = ops::conv2d(tape, x, params.tensors[conv.first_tensor],
                      params.tensors[conv.first_tensor + 1], 1, conv.kernel / 2);
      x = ops::instance_norm(tape, x, params.tensors[norm.first_tensor],
                             params.tensors[norm.first_tensor + 1]);
      if (!first_norm_seen) {
        trace.first_norm = x;
        first_norm_seen = true;
      }
      x = ops::relu(tape, x);
    }
    return x;
  };

  std::vector<Var> skips;
  Var x = batch;
  for (std::size_t level = 0; level < arch.depth; ++level) {
    x = block(x);
    skips.push_back(x);
    x = ops::maxpool2(tape, x);
  }
  x = block(x);
  for (std::size_t level = arch.depth; level-- > 0;) {
    x = ops::upsample2(tape, x);
    x = ops::concat_channels(tape, x, skips[level]);
    x = block(x);
  }
  const LayerSpec& head = table[next++];
  x = ops::conv2d(tape, x, params.tensors[head.first_tensor],
                  params.tensors[head.first_tensor + 1], 1, 0);
  trace.probabilities = ops::sigmoid(tape, x);
  return trace;
}

Var forward(Tape& tape, const BoundParams& params, Var batch) {
  return forward_trace(tape, params, batch).probabilities;
}

Tensor predict(const ParamVector& params, const Tensor& batch) {
  Tape tape;
  const BoundParams bound = bind(tape, params, false);
  const Var x = tape.constant(batch);
  return tape.value(forward(tape, bound, x));
}

MMS_END_NAMESPACE
