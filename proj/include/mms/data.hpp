#pragma once

#include "mms/abi.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mms/tensor.hpp"

MMS_BEGIN_NAMESPACE

// A stack of D slices of H x W intensities with aligned binary masks.
struct Volume {
  std::string dataset_id;
  std::uint32_t volume_id = 0;
  // Number of modalities/zones of the parent organ.
  std::uint16_t modality_count = 1;
  std::size_t depth = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> intensities;   // D*H*W
  std::vector<std::uint8_t> masks;  // D*H*W, values in {0,1}

  std::size_t slice_pixels() const noexcept { return height * width; }
  // Throws DataError on size mismatch or non-binary masks.
  void validate() const;

  bool operator==(const Volume&) const = default;
};

struct SliceSample {
  Tensor image;  // [1,H,W]
  Tensor mask;   // [1,H,W], values in {0,1}
  std::uint32_t volume_id = 0;
  std::size_t slice_index = 0;
};

SliceSample extract_slice(const Volume& v, std::size_t index);

struct NormalizationStats {
  double mean = 0.0;
  double stddev = 0.0;
};

// Statistics over the non-zero pixels of the whole volume.
// Throws DataError with fewer than two non-zero pixels or zero spread.
NormalizationStats nonzero_stats(const Volume& v);

// Applies (x - mean_nz) / std_nz to every pixel, zeros included.
Volume normalize_volume(const Volume& v);

// Slices whose mask pixel count is at least `threshold`.
std::vector<std::size_t> presence_filter(const Volume& v, std::size_t threshold);

// Bilinear (center-aligned) for the image, nearest neighbour for the mask.
SliceSample resize(const SliceSample& sample, std::size_t height, std::size_t width);
Volume resize_volume(const Volume& v, std::size_t height, std::size_t width);

struct DatasetInfo {
  std::string id;
  std::string organ;
  std::uint16_t modality_count = 1;
  std::size_t presence_threshold = 10;

  bool operator==(const DatasetInfo&) const = default;
};

// A preprocessed dataset: normalized, resized volumes plus, per volume, the
// slice indices that pass the presence threshold. Only those slices are ever
// sampled.
struct Dataset {
  DatasetInfo info;
  std::vector<Volume> volumes;
  std::vector<std::vector<std::size_t>> eligible;

  std::size_t eligible_count() const;
  SliceSample slice(std::size_t volume_index, std::size_t slice_index) const;
};

// normalize -> resize -> presence filter.
Dataset prepare_dataset(DatasetInfo info, const std::vector<Volume>& raw, std::size_t resolution);

// Stacks samples into [N,1,H,W] image and mask tensors.
struct Batch {
  Tensor images;
  Tensor masks;
};
Batch stack(const std::vector<SliceSample>& samples);

MMS_END_NAMESPACE
