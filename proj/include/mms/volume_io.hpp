#pragma once

#include "mms/abi.hpp"

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "mms/data.hpp"
#include "mms/synth.hpp"

MMS_BEGIN_NAMESPACE

// MMVL volume layout (little-endian):
//   "MMVL" | u32 version | u16 id length + UTF-8 dataset id | u32 volume id |
//   u16 z | u32 D, H, W | D*H*W f32 intensities | D*H*W u8 masks
inline constexpr std::uint32_t kVolumeVersion = 1;

void write_volume(std::ostream& os, const Volume& v);
Volume read_volume(std::istream& is, const std::string& source = "<stream>");

void save_volume(const std::filesystem::path& path, const Volume& v);
Volume load_volume(const std::filesystem::path& path);

// On-disk layout: <root>/manifest.csv plus one directory per dataset holding
// vol_NNNN.mmvl files. Manifest columns: dataset_id,organ,z,threshold,volumes,role
// where role is "target" for datasets of the held-out organ and "source" otherwise.
void write_benchmark_dir(const std::filesystem::path& root, const Benchmark& bench,
                         const std::string& target_organ);

struct BenchmarkDir {
  Benchmark bench;
  std::string target_organ;  // empty when no dataset has role "target"
};
BenchmarkDir read_benchmark_dir(const std::filesystem::path& root);

MMS_END_NAMESPACE
