#include "mms/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <memory>
#include <cmath>
#include <string>

#include "mms/error.hpp"

MMS_BEGIN_NAMESPACE
namespace ops {
namespace {

using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void require_rank(const Tape& tape, Var v, std::size_t rank, const char* op) {
  if (tape.shape(v).size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(tape.shape(v)));
  }
}

void require_same_shape(const Tape& tape, Var a, Var b, const char* op) {
  if (tape.shape(a) != tape.shape(b)) {
    throw DimensionError(std::string(op) + ": shape " + shape_str(tape.shape(a)) + " vs " +
                         shape_str(tape.shape(b)));
  }
}

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t kh, kw, stride, padding;
  std::size_t out_h, out_w;
  std::size_t patch() const { return channels * kh * kw; }
  std::size_t pixels() const { return out_h * out_w; }
};

void im2col(const Scalar* image, const ConvGeometry& g, Scalar* cols) {
  const std::size_t p = g.pixels();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        Scalar* row = cols + ((c * g.kh + ki) * g.kw + kj) * p;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + ki) - static_cast<long>(g.padding);
          Scalar* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= static_cast<long>(g.height)) {
            std::fill(dst, dst + g.out_w, Scalar(0));
            continue;
          }
          const Scalar* src = image + (c * g.height + static_cast<std::size_t>(ih)) * g.width;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = static_cast<long>(ow * g.stride + kj) - static_cast<long>(g.padding);
            dst[ow] = (iw < 0 || iw >= static_cast<long>(g.width))
                          ? Scalar(0)
                          : src[static_cast<std::size_t>(iw)];
          }
        }
      }
    }
  }
}

void col2im_add(const Scalar* cols, const ConvGeometry& g, Scalar* image) {
  const std::size_t p = g.pixels();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const Scalar* row = cols + ((c * g.kh + ki) * g.kw + kj) * p;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + ki) - static_cast<long>(g.padding);
          if (ih < 0 || ih >= static_cast<long>(g.height)) continue;
          Scalar* dst = image + (c * g.height + static_cast<std::size_t>(ih)) * g.width;
          const Scalar* src = row + oh * g.out_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = static_cast<long>(ow * g.stride + kj) - static_cast<long>(g.padding);
            if (iw >= 0 && iw < static_cast<long>(g.width)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

// Elementwise op with a derivative expressed in terms of (x, y).
template <typename Fwd, typename Deriv>
Var unary(Tape& tape, Var x, const char* name, Fwd fwd, Deriv deriv) {
  const Tensor& in = tape.value(x);
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return tape.record(name, std::move(out), {x}, [x, deriv](Tape& t, Var y) {
    const std::vector<Scalar>& gy = t.grad(y);
    const Tensor& xv = t.value(x);
    const Tensor& yv = t.value(y);
    std::vector<Scalar>& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * deriv(xv[i], yv[i]);
  });
}

}  // namespace

Var conv2d(Tape& tape, Var input, Var kernel, Var bias, std::size_t stride, std::size_t padding) {
  require_rank(tape, input, 4, "conv2d");
  require_rank(tape, kernel, 4, "conv2d");
  require_rank(tape, bias, 1, "conv2d");
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  const Shape& is = tape.shape(input);
  const Shape& ks = tape.shape(kernel);
  if (ks[1] != is[1]) {
    throw DimensionError("conv2d: kernel " + shape_str(ks) + " does not match input " +
                         shape_str(is));
  }
  if (tape.shape(bias)[0] != ks[0]) {
    throw DimensionError("conv2d: bias " + shape_str(tape.shape(bias)) + " for " +
                         std::to_string(ks[0]) + " filters");
  }
  const std::size_t padded_h = is[2] + 2 * padding;
  const std::size_t padded_w = is[3] + 2 * padding;
  if (ks[2] > padded_h || ks[3] > padded_w) {
    throw DimensionError("conv2d: kernel " + shape_str(ks) + " larger than padded input " +
                         shape_str(is));
  }
  if ((padded_h - ks[2]) % stride != 0 || (padded_w - ks[3]) % stride != 0) {
    throw ConfigError("conv2d: output size is not integral for input " + shape_str(is) +
                      ", kernel " + shape_str(ks) + ", stride " + std::to_string(stride));
  }
  const std::size_t batch = is[0];
  const std::size_t filters = ks[0];
  const ConvGeometry g{is[1], is[2], is[3], ks[2], ks[3], stride, padding,
                       (padded_h - ks[2]) / stride + 1, (padded_w - ks[3]) / stride + 1};

  Tensor out({batch, filters, g.out_h, g.out_w});
  {
    const Tensor& x = tape.value(input);
    const Tensor& k = tape.value(kernel);
    const Tensor& b = tape.value(bias);
    std::vector<Scalar> cols(g.patch() * g.pixels());
    const ConstMatMap kmat(k.data().data(), filters, g.patch());
    const ConstMatMap cmat(cols.data(), g.patch(), g.pixels());
    const std::size_t in_plane = g.channels * g.height * g.width;
    const std::size_t out_plane = filters * g.pixels();
    for (std::size_t n = 0; n < batch; ++n) {
      im2col(x.data().data() + n * in_plane, g, cols.data());
      MatMap omat(out.data().data() + n * out_plane, filters, g.pixels());
      omat.noalias() = kmat * cmat;
      for (std::size_t f = 0; f < filters; ++f) omat.row(f).array() += b[f];
    }
  }

  return tape.record("conv2d", std::move(out), {input, kernel, bias},
                     [input, kernel, bias, g, batch, filters](Tape& t, Var y) {
    const std::vector<Scalar>& gy = t.grad(y);
    const Tensor& x = t.value(input);
    const Tensor& k = t.value(kernel);
    const std::size_t in_plane = g.channels * g.height * g.width;
    const std::size_t out_plane = filters * g.pixels();
    std::vector<Scalar> cols(g.patch() * g.pixels());
    const ConstMatMap cmat(cols.data(), g.patch(), g.pixels());
    const ConstMatMap kmat(k.data().data(), filters, g.patch());
    for (std::size_t n = 0; n < batch; ++n) {
      const ConstMatMap gmat(gy.data() + n * out_plane, filters, g.pixels());
      if (t.requires_grad(kernel)) {
        im2col(x.data().data() + n * in_plane, g, cols.data());
        MatMap gk(t.grad_buffer(kernel).data(), filters, g.patch());
        gk.noalias() += gmat * cmat.transpose();
      }
      if (t.requires_grad(bias)) {
        // Plain loop: Eigen's vectorised reductions round differently depending
        // on buffer alignment, which breaks run-to-run reproducibility.
        std::vector<Scalar>& gb = t.grad_buffer(bias);
        const Scalar* row = gy.data() + n * out_plane;
        for (std::size_t f = 0; f < filters; ++f, row += g.pixels()) {
          double acc = 0.0;
          for (std::size_t i = 0; i < g.pixels(); ++i) acc += row[i];
          gb[f] += static_cast<Scalar>(acc);
        }
      }
      if (t.requires_grad(input)) {
        MatMap gcols(cols.data(), g.patch(), g.pixels());
        gcols.noalias() = kmat.transpose() * gmat;
        col2im_add(cols.data(), g, t.grad_buffer(input).data() + n * in_plane);
      }
    }
  });
}

Var instance_norm(Tape& tape, Var input, Var gain, Var shift, Scalar eps) {
  require_rank(tape, input, 4, "instance_norm");
  const Shape& s = tape.shape(input);
  const std::size_t batch = s[0], channels = s[1], plane = s[2] * s[3];
  if (plane < 2) {
    throw DimensionError("instance_norm: degenerate plane of " + std::to_string(plane) +
                         " pixel(s) in " + shape_str(s));
  }
  if (tape.shape(gain) != Shape{channels} || tape.shape(shift) != Shape{channels}) {
    throw DimensionError("instance_norm: gain/shift " + shape_str(tape.shape(gain)) + "/" +
                         shape_str(tape.shape(shift)) + " for " + std::to_string(channels) +
                         " channels");
  }
  const Tensor& x = tape.value(input);
  const Tensor& gv = tape.value(gain);
  const Tensor& bv = tape.value(shift);
  Tensor out(s);
  // Normalised values are kept for the backward rule.
  auto xhat = std::make_shared<std::vector<Scalar>>(x.size());
  auto inv_std = std::make_shared<std::vector<Scalar>>(batch * channels);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t off = (n * channels + c) * plane;
      double mu = 0.0;
      for (std::size_t i = 0; i < plane; ++i) mu += x[off + i];
      mu /= static_cast<double>(plane);
      double var = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = x[off + i] - mu;
        var += d * d;
      }
      var /= static_cast<double>(plane);
      const double denom = std::sqrt(var + static_cast<double>(eps));
      if (!(denom > 0.0)) {
        throw NumericError("instance_norm: zero variance plane with eps = 0");
      }
      const Scalar is = static_cast<Scalar>(1.0 / denom);
      (*inv_std)[n * channels + c] = is;
      for (std::size_t i = 0; i < plane; ++i) {
        const Scalar h = static_cast<Scalar>((x[off + i] - mu)) * is;
        (*xhat)[off + i] = h;
        out[off + i] = gv[c] * h + bv[c];
      }
    }
  }
  return tape.record("instance_norm", std::move(out), {input, gain, shift},
                     [input, gain, shift, xhat, inv_std, batch, channels, plane](Tape& t, Var y) {
    const std::vector<Scalar>& gy = t.grad(y);
    const Tensor& gv = t.value(gain);
    const bool need_x = t.requires_grad(input);
    const bool need_g = t.requires_grad(gain);
    const bool need_b = t.requires_grad(shift);
    const double m = static_cast<double>(plane);
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t off = (n * channels + c) * plane;
        double sum_g = 0.0, sum_gh = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
          sum_g += gy[off + i];
          sum_gh += static_cast<double>(gy[off + i]) * (*xhat)[off + i];
        }
        if (need_g) t.grad_buffer(gain)[c] += static_cast<Scalar>(sum_gh);
        if (need_b) t.grad_buffer(shift)[c] += static_cast<Scalar>(sum_g);
        if (need_x) {
          std::vector<Scalar>& gx = t.grad_buffer(input);
          const double k = static_cast<double>(gv[c]) * (*inv_std)[n * channels + c] / m;
          for (std::size_t i = 0; i < plane; ++i) {
            gx[off + i] += static_cast<Scalar>(
                k * (m * gy[off + i] - sum_g - (*xhat)[off + i] * sum_gh));
          }
        }
      }
    }
  });
}

Var relu(Tape& tape, Var x) {
  return unary(
      tape, x, "relu", [](Scalar v) { return v > 0 ? v : Scalar(0); },
      [](Scalar v, Scalar) { return v > 0 ? Scalar(1) : Scalar(0); });
}

Var sigmoid(Tape& tape, Var x) {
  return unary(
      tape, x, "sigmoid",
      [](Scalar v) {
        if (v >= 0) return Scalar(1) / (Scalar(1) + std::exp(-v));
        const Scalar e = std::exp(v);
        return e / (Scalar(1) + e);
      },
      [](Scalar, Scalar y) { return y * (Scalar(1) - y); });
}

Var scale(Tape& tape, Var x, Scalar factor) {
  return unary(
      tape, x, "scale", [factor](Scalar v) { return v * factor; },
      [factor](Scalar, Scalar) { return factor; });
}

Var add_scalar(Tape& tape, Var x, Scalar offset) {
  return unary(
      tape, x, "add_scalar", [offset](Scalar v) { return v + offset; },
      [](Scalar, Scalar) { return Scalar(1); });
}

Var log(Tape& tape, Var x) {
  for (Scalar v : tape.value(x).data()) {
    if (!(v > 0)) throw NumericError("log of non-positive value " + std::to_string(v));
  }
  return unary(
      tape, x, "log", [](Scalar v) { return std::log(v); },
      [](Scalar v, Scalar) { return Scalar(1) / v; });
}

Var clamp(Tape& tape, Var x, Scalar lo, Scalar hi) {
  if (!(lo < hi)) throw ConfigError("clamp: lo must be < hi");
  return unary(
      tape, x, "clamp", [lo, hi](Scalar v) { return std::clamp(v, lo, hi); },
      [lo, hi](Scalar v, Scalar) { return (v >= lo && v <= hi) ? Scalar(1) : Scalar(0); });
}

Var pow_scalar(Tape& tape, Var x, Scalar p) {
  for (Scalar v : tape.value(x).data()) {
    if (v < 0) throw NumericError("pow_scalar of negative value " + std::to_string(v));
  }
  return unary(
      tape, x, "pow_scalar", [p](Scalar v) { return std::pow(v, p); },
      [p](Scalar v, Scalar) { return v > 0 ? p * std::pow(v, p - Scalar(1)) : Scalar(0); });
}

Var add(Tape& tape, Var a, Var b) {
  require_same_shape(tape, a, b, "add");
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return tape.record("add", std::move(out), {a, b}, [a, b](Tape& t, Var y) {
    const std::vector<Scalar>& gy = t.grad(y);
    for (Var in : {a, b}) {
      if (!t.requires_grad(in)) continue;
      std::vector<Scalar>& g = t.grad_buffer(in);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
    }
  });
}

Var sub(Tape& tape, Var a, Var b) {
  require_same_shape(tape, a, b, "sub");
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return tape.record("sub", std::move(out), {a, b}, [a, b](Tape& t, Var y) {
    const std::vector<Scalar>& gy = t.grad(y);
    if (t.requires_grad(a)) {
      std::vector<Scalar>& g = t.grad_buffer(a);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
    }
    if (t.requires_grad(b)) {
      std::vector<Scalar>& g = t.grad_buffer(b);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] -= gy[i];
    }
  });
}

Var mul(Tape& tape, Var a, Var b) {
  require_same_shape(tape, a, b, "mul");
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return tape.record("mul", std::move(out), {a, b}, [a, b](Tape& t, Var y) {
    const std::vector<Scalar>& gy = t.grad(y);
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (t.requires_grad(a)) {
      std::vector<Scalar>& g = t.grad_buffer(a);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      std::vector<Scalar>& g = t.grad_buffer(b);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * av[i];
    }
  });
}

Var div(Tape& tape, Var a, Var b) {
  require_same_shape(tape, a, b, "div");
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (bv[i] == 0) throw NumericError("div: division by zero");
    out[i] = av[i] / bv[i];
  }
  return tape.record("div", std::move(out), {a, b}, [a, b](Tape& t, Var y) {
    const std::vector<Scalar>& gy = t.grad(y);
    const Tensor& bv = t.value(b);
    const Tensor& yv = t.value(y);
    if (t.requires_grad(a)) {
      std::vector<Scalar>& g = t.grad_buffer(a);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] / bv[i];
    }
    if (t.requires_grad(b)) {
      std::vector<Scalar>& g = t.grad_buffer(b);
      for (std::size_t i = 0; i < gy.size(); ++i) g[i] -= gy[i] * yv[i] / bv[i];
    }
  });
}

Var sum(Tape& tape, Var x) {
  double acc = 0.0;
  for (Scalar v : tape.value(x).data()) acc += v;
  return tape.record("sum", Tensor::scalar(static_cast<Scalar>(acc)), {x}, [x](Tape& t, Var y) {
    const Scalar gy = t.grad(y)[0];
    for (Scalar& g : t.grad_buffer(x)) g += gy;
  });
}

Var mean(Tape& tape, Var x) {
  const std::size_t n = tape.value(x).size();
  if (n == 0) throw DimensionError("mean of empty tensor");
  return scale(tape, sum(tape, x), Scalar(1) / static_cast<Scalar>(n));
}

Var maxpool2(Tape& tape, Var input) {
  require_rank(tape, input, 4, "maxpool2");
  const Shape& s = tape.shape(input);
  if (s[2] % 2 != 0 || s[3] % 2 != 0) {
    throw DimensionError("maxpool2: odd spatial size " + shape_str(s));
  }
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3], oh = h / 2, ow = w / 2;
  const Tensor& x = tape.value(input);
  Tensor out({s[0], s[1], oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        const std::size_t base = p * h * w + 2 * i * w + 2 * j;
        std::size_t best = base;
        for (std::size_t cand : {base + 1, base + w, base + w + 1}) {
          if (x[cand] > x[best]) best = cand;
        }
        const std::size_t o = (p * oh + i) * ow + j;
        out[o] = x[best];
        (*argmax)[o] = best;
      }
    }
  }
  return tape.record("maxpool2", std::move(out), {input}, [input, argmax](Tape& t, Var y) {
    const std::vector<Scalar>& gy = t.grad(y);
    std::vector<Scalar>& gx = t.grad_buffer(input);
    for (std::size_t o = 0; o < gy.size(); ++o) gx[(*argmax)[o]] += gy[o];
  });
}

Var upsample2(Tape& tape, Var input) {
  require_rank(tape, input, 4, "upsample2");
  const Shape& s = tape.shape(input);
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3];
  const Tensor& x = tape.value(input);
  Tensor out({s[0], s[1], 2 * h, 2 * w});
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < 2 * h; ++i) {
      for (std::size_t j = 0; j < 2 * w; ++j) {
        out[(p * 2 * h + i) * 2 * w + j] = x[(p * h + i / 2) * w + j / 2];
      }
    }
  }
  return tape.record("upsample2", std::move(out), {input}, [input, planes, h, w](Tape& t, Var y) {
    const std::vector<Scalar>& gy = t.grad(y);
    std::vector<Scalar>& gx = t.grad_buffer(input);
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t i = 0; i < 2 * h; ++i) {
        for (std::size_t j = 0; j < 2 * w; ++j) {
          gx[(p * h + i / 2) * w + j / 2] += gy[(p * 2 * h + i) * 2 * w + j];
        }
      }
    }
  });
}

Var concat_channels(Tape& tape, Var a, Var b) {
  require_rank(tape, a, 4, "concat_channels");
  require_rank(tape, b, 4, "concat_channels");
  const Shape& sa = tape.shape(a);
  const Shape& sb = tape.shape(b);
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3]) {
    throw DimensionError("concat_channels: " + shape_str(sa) + " vs " + shape_str(sb));
  }
  const std::size_t batch = sa[0];
  const std::size_t block_a = sa[1] * sa[2] * sa[3];
  const std::size_t block_b = sb[1] * sb[2] * sb[3];
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  Tensor out({batch, sa[1] + sb[1], sa[2], sa[3]});
  for (std::size_t n = 0; n < batch; ++n) {
    Scalar* dst = out.data().data() + n * (block_a + block_b);
    std::copy_n(av.data().data() + n * block_a, block_a, dst);
    std::copy_n(bv.data().data() + n * block_b, block_b, dst + block_a);
  }
  return tape.record("concat_channels", std::move(out), {a, b},
                     [a, b, batch, block_a, block_b](Tape& t, Var y) {
    const std::vector<Scalar>& gy = t.grad(y);
    for (std::size_t n = 0; n < batch; ++n) {
      const Scalar* src = gy.data() + n * (block_a + block_b);
      if (t.requires_grad(a)) {
        Scalar* ga = t.grad_buffer(a).data() + n * block_a;
        for (std::size_t i = 0; i < block_a; ++i) ga[i] += src[i];
      }
      if (t.requires_grad(b)) {
        Scalar* gb = t.grad_buffer(b).data() + n * block_b;
        for (std::size_t i = 0; i < block_b; ++i) gb[i] += src[block_a + i];
      }
    }
  });
}

}  // namespace ops
MMS_END_NAMESPACE
