#include "mms/data.hpp"

#include <algorithm>
#include <cmath>

#include "mms/error.hpp"

MMS_BEGIN_NAMESPACE

void Volume::validate() const {
  const std::size_t n = depth * height * width;
  if (intensities.size() != n || masks.size() != n) {
    throw DataError("volume " + dataset_id + "/" + std::to_string(volume_id) +
                    ": slices and masks do not match " + std::to_string(depth) + "x" +
                    std::to_string(height) + "x" + std::to_string(width));
  }
  for (std::uint8_t m : masks) {
    if (m > 1) throw DataError("volume " + dataset_id + "/" + std::to_string(volume_id) +
                               ": mask value " + std::to_string(m) + " is not binary");
  }
}

SliceSample extract_slice(const Volume& v, std::size_t index) {
  if (index >= v.depth) {
    throw DataError("slice " + std::to_string(index) + " out of range for volume of depth " +
                    std::to_string(v.depth));
  }
  const std::size_t plane = v.slice_pixels();
  SliceSample s{Tensor({1, v.height, v.width}), Tensor({1, v.height, v.width}), v.volume_id,
                index};
  for (std::size_t i = 0; i < plane; ++i) {
    s.image[i] = static_cast<Scalar>(v.intensities[index * plane + i]);
    s.mask[i] = static_cast<Scalar>(v.masks[index * plane + i]);
  }
  return s;
}

NormalizationStats nonzero_stats(const Volume& v) {
  double sum = 0.0;
  std::size_t count = 0;
  for (float x : v.intensities) {
    if (x != 0.0f) {
      sum += x;
      ++count;
    }
  }
  if (count < 2) {
    throw DataError("volume " + v.dataset_id + "/" + std::to_string(v.volume_id) +
                    " has fewer than two non-zero pixels");
  }
  const double mean = sum / static_cast<double>(count);
  double ss = 0.0;
  for (float x : v.intensities) {
    if (x != 0.0f) ss += (x - mean) * (x - mean);
  }
  const double stddev = std::sqrt(ss / static_cast<double>(count));
  if (stddev == 0.0) {
    throw DataError("degenerate volume " + v.dataset_id + "/" + std::to_string(v.volume_id) +
                    ": non-zero pixels have zero variance");
  }
  return {mean, stddev};
}

Volume normalize_volume(const Volume& v) {
  const NormalizationStats st = nonzero_stats(v);
  Volume out = v;
  for (float& x : out.intensities) {
    x = static_cast<float>((static_cast<double>(x) - st.mean) / st.stddev);
  }
  return out;
}

std::vector<std::size_t> presence_filter(const Volume& v, std::size_t threshold) {
  std::vector<std::size_t> keep;
  const std::size_t plane = v.slice_pixels();
  for (std::size_t d = 0; d < v.depth; ++d) {
    const auto first = v.masks.begin() + static_cast<std::ptrdiff_t>(d * plane);
    const auto count = static_cast<std::size_t>(
        std::count(first, first + static_cast<std::ptrdiff_t>(plane), std::uint8_t{1}));
    if (count >= threshold) keep.push_back(d);
  }
  return keep;
}

namespace {

// Center-aligned source coordinate for destination index `dst`.
double source_coord(std::size_t dst, std::size_t in, std::size_t out) {
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  return std::clamp((static_cast<double>(dst) + 0.5) * scale - 0.5, 0.0,
                    static_cast<double>(in - 1));
}

std::size_t nearest_index(std::size_t dst, std::size_t in, std::size_t out) {
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const auto idx = static_cast<std::size_t>(std::floor((static_cast<double>(dst) + 0.5) * scale));
  return std::min(idx, in - 1);
}

template <typename In, typename Out>
void bilinear_plane(const In* src, std::size_t h, std::size_t w, Out* dst, std::size_t oh,
                    std::size_t ow) {
  for (std::size_t i = 0; i < oh; ++i) {
    const double y = source_coord(i, h, oh);
    const auto y0 = static_cast<std::size_t>(std::floor(y));
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = y - static_cast<double>(y0);
    for (std::size_t j = 0; j < ow; ++j) {
      const double x = source_coord(j, w, ow);
      const auto x0 = static_cast<std::size_t>(std::floor(x));
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = x - static_cast<double>(x0);
      const double top = (1.0 - fx) * src[y0 * w + x0] + fx * src[y0 * w + x1];
      const double bottom = (1.0 - fx) * src[y1 * w + x0] + fx * src[y1 * w + x1];
      dst[i * ow + j] = static_cast<Out>((1.0 - fy) * top + fy * bottom);
    }
  }
}

template <typename In, typename Out>
void nearest_plane(const In* src, std::size_t h, std::size_t w, Out* dst, std::size_t oh,
                   std::size_t ow) {
  for (std::size_t i = 0; i < oh; ++i) {
    const std::size_t y = nearest_index(i, h, oh);
    for (std::size_t j = 0; j < ow; ++j) dst[i * ow + j] = static_cast<Out>(src[y * w + nearest_index(j, w, ow)]);
  }
}

}  // namespace

SliceSample resize(const SliceSample& sample, std::size_t height, std::size_t width) {
  if (height < 1 || width < 1) throw ConfigError("resize: target size must be positive");
  const std::size_t h = sample.image.dim(1), w = sample.image.dim(2);
  if (h == height && w == width) return sample;
  SliceSample out{Tensor({1, height, width}), Tensor({1, height, width}), sample.volume_id,
                  sample.slice_index};
  bilinear_plane(sample.image.data().data(), h, w, out.image.data().data(), height, width);
  nearest_plane(sample.mask.data().data(), h, w, out.mask.data().data(), height, width);
  return out;
}

Volume resize_volume(const Volume& v, std::size_t height, std::size_t width) {
  if (height < 1 || width < 1) throw ConfigError("resize: target size must be positive");
  if (v.height == height && v.width == width) return v;
  Volume out = v;
  out.height = height;
  out.width = width;
  out.intensities.assign(v.depth * height * width, 0.0f);
  out.masks.assign(v.depth * height * width, 0);
  const std::size_t in_plane = v.slice_pixels(), out_plane = height * width;
  for (std::size_t d = 0; d < v.depth; ++d) {
    bilinear_plane(v.intensities.data() + d * in_plane, v.height, v.width,
                   out.intensities.data() + d * out_plane, height, width);
    nearest_plane(v.masks.data() + d * in_plane, v.height, v.width,
                  out.masks.data() + d * out_plane, height, width);
  }
  return out;
}

std::size_t Dataset::eligible_count() const {
  std::size_t n = 0;
  for (const auto& e : eligible) n += e.size();
  return n;
}

SliceSample Dataset::slice(std::size_t volume_index, std::size_t slice_index) const {
  return extract_slice(volumes.at(volume_index), slice_index);
}

Dataset prepare_dataset(DatasetInfo info, const std::vector<Volume>& raw, std::size_t resolution) {
  Dataset ds{std::move(info), {}, {}};
  for (const Volume& v : raw) {
    v.validate();
    Volume prepared = resize_volume(normalize_volume(v), resolution, resolution);
    ds.eligible.push_back(presence_filter(prepared, ds.info.presence_threshold));
    ds.volumes.push_back(std::move(prepared));
  }
  return ds;
}

Batch stack(const std::vector<SliceSample>& samples) {
  if (samples.empty()) throw DataError("cannot stack an empty sample list");
  const std::size_t h = samples.front().image.dim(1), w = samples.front().image.dim(2);
  Batch b{Tensor({samples.size(), 1, h, w}), Tensor({samples.size(), 1, h, w})};
  const std::size_t plane = h * w;
  for (std::size_t n = 0; n < samples.size(); ++n) {
    if (samples[n].image.shape() != Shape{1, h, w} || samples[n].mask.shape() != Shape{1, h, w}) {
      throw DimensionError("stack: sample " + std::to_string(n) + " has shape " +
                           shape_str(samples[n].image.shape()));
    }
    std::copy_n(samples[n].image.data().data(), plane, b.images.data().data() + n * plane);
    std::copy_n(samples[n].mask.data().data(), plane, b.masks.data().data() + n * plane);
  }
  return b;
}

MMS_END_NAMESPACE
