#include "mms/volume_io.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "mms/binio.hpp"
#include "mms/error.hpp"

MMS_BEGIN_NAMESPACE

void write_volume(std::ostream& os, const Volume& v) {
  using binio::write_le;
  v.validate();
  if (v.dataset_id.size() > 0xFFFF) throw DataError("dataset id too long: " + v.dataset_id);
  os.write("MMVL", 4);
  write_le<std::uint32_t>(os, kVolumeVersion);
  write_le<std::uint16_t>(os, static_cast<std::uint16_t>(v.dataset_id.size()));
  os.write(v.dataset_id.data(), static_cast<std::streamsize>(v.dataset_id.size()));
  write_le<std::uint32_t>(os, v.volume_id);
  write_le<std::uint16_t>(os, v.modality_count);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(v.depth));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(v.height));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(v.width));
  for (float x : v.intensities) write_le<float>(os, x);
  os.write(reinterpret_cast<const char*>(v.masks.data()),
           static_cast<std::streamsize>(v.masks.size()));
}

Volume read_volume(std::istream& is, const std::string& source) {
  using binio::read_le;
  binio::expect_magic(is, "MMVL", source);
  const auto version = read_le<std::uint32_t>(is, "version");
  if (version != kVolumeVersion) {
    throw DataError(source + ": unsupported volume version " + std::to_string(version));
  }
  Volume v;
  const auto id_len = read_le<std::uint16_t>(is, "dataset id length");
  v.dataset_id.resize(id_len);
  if (!is.read(v.dataset_id.data(), id_len)) throw DataError(source + ": truncated dataset id");
  v.volume_id = read_le<std::uint32_t>(is, "volume id");
  v.modality_count = read_le<std::uint16_t>(is, "modality count");
  v.depth = read_le<std::uint32_t>(is, "depth");
  v.height = read_le<std::uint32_t>(is, "height");
  v.width = read_le<std::uint32_t>(is, "width");
  const std::size_t n = v.depth * v.height * v.width;
  v.intensities.resize(n);
  for (float& x : v.intensities) x = read_le<float>(is, source + " intensities");
  v.masks.resize(n);
  if (!is.read(reinterpret_cast<char*>(v.masks.data()), static_cast<std::streamsize>(n))) {
    throw DataError(source + ": truncated mask data");
  }
  v.validate();
  return v;
}

void save_volume(const std::filesystem::path& path, const Volume& v) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  write_volume(os, v);
  if (!os) throw DataError("write failed for " + path.string());
}

Volume load_volume(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open volume " + path.string());
  return read_volume(is, path.string());
}

namespace {

std::string volume_file_name(std::uint32_t volume_id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "vol_%04u.mmvl", volume_id);
  return buf;
}

}  // namespace

void write_benchmark_dir(const std::filesystem::path& root, const Benchmark& bench,
                         const std::string& target_organ) {
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec) throw DataError("cannot create " + root.string() + ": " + ec.message());

  std::map<std::string, std::size_t> counts;
  for (const Volume& v : bench.volumes) {
    const std::filesystem::path dir = root / v.dataset_id;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
    save_volume(dir / volume_file_name(v.volume_id), v);
    ++counts[v.dataset_id];
  }

  std::ofstream manifest(root / "manifest.csv", std::ios::trunc);
  if (!manifest) throw DataError("cannot write manifest in " + root.string());
  manifest << "dataset_id,organ,z,threshold,volumes,role\n";
  for (const DatasetInfo& d : bench.datasets) {
    manifest << d.id << ',' << d.organ << ',' << d.modality_count << ',' << d.presence_threshold
             << ',' << counts[d.id] << ',' << (d.organ == target_organ ? "target" : "source")
             << '\n';
  }
}

BenchmarkDir read_benchmark_dir(const std::filesystem::path& root) {
  const std::filesystem::path manifest_path = root / "manifest.csv";
  std::ifstream manifest(manifest_path);
  if (!manifest) throw DataError("missing manifest " + manifest_path.string());
  BenchmarkDir out;
  std::string line;
  std::getline(manifest, line);
  if (line != "dataset_id,organ,z,threshold,volumes,role") {
    throw DataError(manifest_path.string() + ": unexpected header '" + line + "'");
  }
  std::size_t line_no = 1;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 6) {
      throw DataError(manifest_path.string() + ":" + std::to_string(line_no) +
                      ": expected 6 fields");
    }
    DatasetInfo info;
    std::size_t volumes = 0;
    try {
      info.id = fields[0];
      info.organ = fields[1];
      info.modality_count = static_cast<std::uint16_t>(std::stoul(fields[2]));
      info.presence_threshold = std::stoul(fields[3]);
      volumes = std::stoul(fields[4]);
    } catch (const std::exception&) {
      throw DataError(manifest_path.string() + ":" + std::to_string(line_no) +
                      ": malformed numeric field");
    }
    if (fields[5] == "target") out.target_organ = info.organ;
    for (std::uint32_t k = 0; k < volumes; ++k) {
      Volume v = load_volume(root / info.id / volume_file_name(k));
      if (v.dataset_id != info.id) {
        throw DataError("volume file for " + info.id + " carries dataset id " + v.dataset_id);
      }
      out.bench.volumes.push_back(std::move(v));
    }
    out.bench.datasets.push_back(std::move(info));
  }
  return out;
}

MMS_END_NAMESPACE
