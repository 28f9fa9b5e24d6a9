#pragma once

#include "mms/abi.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mms/data.hpp"

MMS_BEGIN_NAMESPACE

// Shape/appearance parameters of one synthetic organ. Positions and axes are
// fractions of the image side. Each volume holds one elliptical object whose
// center, size and orientation drift smoothly with the slice index inside a
// zero-padded "body" region.
struct OrganFamily {
  std::string name;
  std::uint16_t modalities = 1;
  double center_x = 0.5;
  double center_y = 0.5;
  // Total center displacement from the first to the last slice.
  double drift_x = 0.1;
  double drift_y = 0.1;
  double axis_min = 0.10;
  double axis_max = 0.15;
  // Minor/major axis ratio.
  double eccentricity = 0.6;
  double tissue_intensity = 100.0;
  double contrast = 40.0;
  double noise = 8.0;
  std::size_t volumes = 20;
  std::size_t slices = 24;
  std::size_t size = 64;
  std::size_t presence_threshold = 10;
};

struct BenchmarkSpec {
  std::vector<OrganFamily> families;
  // Resolution the slices are brought to before training.
  std::size_t resolution = 32;
  // Family held out as the target domain.
  std::string target = "spleen";
};

// 4 source families (one with two modalities) and one held-out target.
BenchmarkSpec default_benchmark_spec();

BenchmarkSpec load_benchmark_spec(const std::filesystem::path& path);
void save_benchmark_spec(const std::filesystem::path& path, const BenchmarkSpec& spec);

// Dataset id for modality m of a family: the family name if it has one
// modality, otherwise "<name>_m<m>".
std::string dataset_id_for(const OrganFamily& family, std::size_t modality);

struct Benchmark {
  std::vector<DatasetInfo> datasets;
  std::vector<Volume> volumes;  // raw, native resolution
};

// Deterministic under `seed`. Requires at least two families.
Benchmark generate_benchmark(const std::vector<OrganFamily>& families, std::uint64_t seed);

// Groups raw volumes by dataset and runs prepare_dataset on each.
std::vector<Dataset> prepare_benchmark(const Benchmark& bench, std::size_t resolution);

MMS_END_NAMESPACE
