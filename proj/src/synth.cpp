#include "mms/synth.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numbers>

#include "mms/error.hpp"
#include "mms/rng.hpp"

MMS_BEGIN_NAMESPACE

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(OrganFamily, name, modalities, center_x, center_y,
                                                drift_x, drift_y, axis_min, axis_max,
                                                eccentricity, tissue_intensity, contrast, noise,
                                                volumes, slices, size, presence_threshold)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BenchmarkSpec, families, resolution, target)

BenchmarkSpec default_benchmark_spec() {
  BenchmarkSpec spec;
  auto family = [](std::string name, std::uint16_t z, double cx, double cy, double dx, double dy,
                   double amin, double amax, double ecc, double tissue, double contrast,
                   double noise) {
    OrganFamily f;
    f.name = std::move(name);
    f.modalities = z;
    f.center_x = cx;
    f.center_y = cy;
    f.drift_x = dx;
    f.drift_y = dy;
    f.axis_min = amin;
    f.axis_max = amax;
    f.eccentricity = ecc;
    f.tissue_intensity = tissue;
    f.contrast = contrast;
    f.noise = noise;
    return f;
  };
  spec.families = {
      family("liver", 1, 0.34, 0.36, 0.14, 0.10, 0.14, 0.19, 0.70, 100.0, 45.0, 9.0),
      family("kidney", 1, 0.66, 0.36, -0.12, 0.12, 0.10, 0.14, 0.55, 120.0, 55.0, 10.0),
      family("brain", 2, 0.36, 0.65, 0.10, -0.12, 0.12, 0.17, 0.85, 80.0, 35.0, 6.0),
      family("pancreas", 1, 0.64, 0.64, -0.14, -0.08, 0.09, 0.13, 0.50, 90.0, 32.0, 8.0),
      family("spleen", 1, 0.50, 0.50, 0.12, 0.10, 0.10, 0.15, 0.60, 110.0, 30.0, 10.0),
  };
  return spec;
}

BenchmarkSpec load_benchmark_spec(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open benchmark spec " + path.string());
  try {
    return nlohmann::json::parse(is).get<BenchmarkSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void save_benchmark_spec(const std::filesystem::path& path, const BenchmarkSpec& spec) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << nlohmann::json(spec).dump(2) << '\n';
}

std::string dataset_id_for(const OrganFamily& family, std::size_t modality) {
  if (family.modalities <= 1) return family.name;
  return family.name + "_m" + std::to_string(modality);
}

namespace {

void validate_family(const OrganFamily& f) {
  auto fail = [&](const std::string& why) {
    throw ConfigError("organ family '" + f.name + "': " + why);
  };
  if (f.name.empty()) fail("empty name");
  if (f.modalities < 1) fail("modalities must be >= 1");
  if (f.volumes < 1 || f.slices < 2 || f.size < 8) fail("needs volumes >= 1, slices >= 2, size >= 8");
  if (!(f.axis_min > 0.0 && f.axis_min <= f.axis_max)) fail("need 0 < axis_min <= axis_max");
  if (!(f.eccentricity > 0.0 && f.eccentricity <= 1.0)) fail("eccentricity must be in (0,1]");
  if (!(f.tissue_intensity > 0.0) || f.noise < 0.0) fail("tissue intensity must be positive");
}

Volume generate_volume(const OrganFamily& f, std::size_t modality, std::uint32_t volume_id,
                       Rng& rng) {
  const std::size_t n = f.size, depth = f.slices;
  Volume v;
  v.dataset_id = dataset_id_for(f, modality);
  v.volume_id = volume_id;
  v.modality_count = f.modalities;
  v.depth = depth;
  v.height = n;
  v.width = n;
  v.intensities.assign(depth * n * n, 0.0f);
  v.masks.assign(depth * n * n, 0);

  // Per-volume variation.
  const double cx0 = f.center_x + rng.uniform(-0.04, 0.04);
  const double cy0 = f.center_y + rng.uniform(-0.04, 0.04);
  const double dx = f.drift_x * rng.uniform(0.8, 1.2);
  const double dy = f.drift_y * rng.uniform(0.8, 1.2);
  const double major = rng.uniform(f.axis_min, f.axis_max);
  const double angle0 = rng.uniform(0.0, std::numbers::pi);
  const double spin = rng.uniform(-0.6, 0.6);
  const double phase_x = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double phase_y = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double freq = rng.uniform(2.0, 4.0);

  // Modalities differ in contrast and texture strength.
  const double contrast = f.contrast * (1.0 - 0.3 * static_cast<double>(modality));
  const double texture = 0.08 * f.tissue_intensity * (1.0 + 0.5 * static_cast<double>(modality));

  const double side = static_cast<double>(n);
  for (std::size_t d = 0; d < depth; ++d) {
    const double t = (static_cast<double>(d) + 0.5) / static_cast<double>(depth);
    // Small at both ends of the volume, largest in the middle.
    const double size_profile = 0.3 + 0.7 * std::sin(std::numbers::pi * t);
    const double a = major * size_profile * side;
    const double b = a * f.eccentricity;
    const double cx = (cx0 + dx * (t - 0.5)) * side;
    const double cy = (cy0 + dy * (t - 0.5)) * side;
    const double theta = angle0 + spin * t;
    const double ct = std::cos(theta), st = std::sin(theta);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double y = static_cast<double>(i) + 0.5;
        const double x = static_cast<double>(j) + 0.5;
        const double by = (y / side - 0.5) / 0.44;
        const double bx = (x / side - 0.5) / 0.47;
        const std::size_t idx = (d * n + i) * n + j;
        if (bx * bx + by * by > 1.0) continue;  // outside the body stays exactly zero
        const double u = ((x - cx) * ct + (y - cy) * st) / a;
        const double w = (-(x - cx) * st + (y - cy) * ct) / b;
        const bool inside = u * u + w * w <= 1.0;
        double value = f.tissue_intensity +
                       texture * std::sin(freq * 2.0 * std::numbers::pi * x / side + phase_x) *
                           std::sin(freq * 2.0 * std::numbers::pi * y / side + phase_y) +
                       f.noise * rng.normal();
        if (inside) value += contrast;
        v.intensities[idx] = static_cast<float>(std::max(value, 1.0));
        v.masks[idx] = inside ? 1 : 0;
      }
    }
  }
  return v;
}

}  // namespace

Benchmark generate_benchmark(const std::vector<OrganFamily>& families, std::uint64_t seed) {
  if (families.size() < 2) {
    throw ConfigError("benchmark needs at least two organ families (sources + target)");
  }
  Benchmark bench;
  for (std::size_t fi = 0; fi < families.size(); ++fi) {
    const OrganFamily& f = families[fi];
    validate_family(f);
    for (std::size_t m = 0; m < f.modalities; ++m) {
      bench.datasets.push_back({dataset_id_for(f, m), f.name, f.modalities, f.presence_threshold});
      Rng rng(derive_seed(seed, fi, m));
      for (std::size_t k = 0; k < f.volumes; ++k) {
        bench.volumes.push_back(generate_volume(f, m, static_cast<std::uint32_t>(k), rng));
      }
    }
  }
  return bench;
}

std::vector<Dataset> prepare_benchmark(const Benchmark& bench, std::size_t resolution) {
  std::vector<Dataset> out;
  for (const DatasetInfo& info : bench.datasets) {
    std::vector<Volume> raw;
    for (const Volume& v : bench.volumes) {
      if (v.dataset_id == info.id) raw.push_back(v);
    }
    out.push_back(prepare_dataset(info, raw, resolution));
  }
  return out;
}

MMS_END_NAMESPACE
