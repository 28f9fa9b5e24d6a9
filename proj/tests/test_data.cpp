#include <doctest.h>

#include <filesystem>
#include <numeric>
#include <sstream>

#include "mms/error.hpp"
#include "mms/rng.hpp"
#include "mms/synth.hpp"
#include "mms/volume_io.hpp"

using namespace mms;
namespace fs = std::filesystem;

namespace {

Volume make_volume(std::size_t d, std::size_t h, std::size_t w) {
  Volume v;
  v.dataset_id = "toy";
  v.volume_id = 3;
  v.depth = d;
  v.height = h;
  v.width = w;
  v.intensities.assign(d * h * w, 0.0f);
  v.masks.assign(d * h * w, 0);
  return v;
}

double mask_iou(const Volume& v, std::size_t a, std::size_t b) {
  const std::size_t n = v.slice_pixels();
  double inter = 0, uni = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool x = v.masks[a * n + i], y = v.masks[b * n + i];
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 1.0 : inter / uni;
}

double slice_mse(const Volume& a, std::size_t i, const Volume& b, std::size_t j) {
  const std::size_t n = a.slice_pixels();
  double s = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double d = double(a.intensities[i * n + k]) - b.intensities[j * n + k];
    s += d * d;
  }
  return s / double(n);
}

const Benchmark& default_bench() {
  static const Benchmark b = generate_benchmark(default_benchmark_spec().families, 123);
  return b;
}

}  // namespace

TEST_CASE("normalization uses non-zero statistics") {
  Volume v = make_volume(1, 1, 4);
  v.intensities = {0, 2, 0, 4};
  const NormalizationStats st = nonzero_stats(v);
  CHECK(st.mean == doctest::Approx(3.0));
  CHECK(st.stddev == doctest::Approx(1.0));
  const Volume n = normalize_volume(v);
  CHECK(n.intensities[1] == doctest::Approx(-1.0));
  CHECK(n.intensities[3] == doctest::Approx(1.0));
  // Zeros go through the same affine map.
  CHECK(n.intensities[0] == doctest::Approx(-3.0));
}

TEST_CASE("normalization is idempotent without zero pixels") {
  Rng rng(1);
  Volume v = make_volume(2, 4, 4);
  for (auto& x : v.intensities) x = static_cast<float>(rng.uniform(1, 50));
  const Volume once = normalize_volume(v);
  const Volume twice = normalize_volume(once);
  for (std::size_t i = 0; i < v.intensities.size(); ++i) {
    CHECK(twice.intensities[i] == doctest::Approx(once.intensities[i]).epsilon(1e-5));
  }
}

TEST_CASE("degenerate volumes are rejected") {
  Volume v = make_volume(1, 2, 2);
  v.intensities = {7, 7, 7, 7};
  CHECK_THROWS_AS(normalize_volume(v), DataError);
  v.intensities = {0, 0, 0, 5};
  CHECK_THROWS_AS(normalize_volume(v), DataError);
}

TEST_CASE("presence filter") {
  Volume v = make_volume(3, 4, 4);
  for (std::size_t i = 0; i < 5; ++i) v.masks[16 + i] = 1;
  for (std::size_t i = 0; i < 12; ++i) v.masks[32 + i] = 1;
  CHECK(presence_filter(v, 0) == std::vector<std::size_t>{0, 1, 2});
  CHECK(presence_filter(v, 6) == std::vector<std::size_t>{2});
}

TEST_CASE("presence filter judges masks at the target resolution") {
  Volume v = make_volume(1, 32, 32);
  for (auto& x : v.intensities) x = 1.0f;
  v.intensities[0] = 2.0f;
  // Two pixels that nearest-neighbour sampling at 8x downscale never hits.
  v.masks[1 * 32 + 1] = 1;
  v.masks[1 * 32 + 2] = 1;
  CHECK(presence_filter(v, 2) == std::vector<std::size_t>{0});
  const Volume small = resize_volume(v, 4, 4);
  CHECK(presence_filter(small, 2).empty());
  const Dataset ds = prepare_dataset({"toy", "toy", 1, 2}, {v}, 4);
  CHECK(ds.eligible_count() == 0);
}

TEST_CASE("resize") {
  SliceSample s;
  s.image = Tensor({1, 2, 2}, {0, 0, 2, 2});
  s.mask = Tensor({1, 2, 2}, {0, 1, 1, 1});
  const SliceSample one = resize(s, 1, 1);
  CHECK(one.image[0] == doctest::Approx(1.0));
  const SliceSample same = resize(s, 2, 2);
  CHECK(same.image.storage() == s.image.storage());
  CHECK(same.mask.storage() == s.mask.storage());

  Rng rng(2);
  SliceSample r;
  r.image = Tensor({1, 7, 9});
  r.mask = Tensor({1, 7, 9});
  for (auto& x : r.image.storage()) x = static_cast<Scalar>(rng.uniform());
  for (auto& x : r.mask.storage()) x = rng.uniform() < 0.5 ? 1 : 0;
  for (auto [h, w] : {std::pair{3, 4}, {14, 18}, {5, 1}}) {
    const SliceSample out = resize(r, h, w);
    CHECK(out.image.shape() == Shape{1, std::size_t(h), std::size_t(w)});
    for (Scalar m : out.mask.data()) CHECK((m == 0 || m == 1));
    for (Scalar x : out.image.data()) {
      CHECK(x >= 0);
      CHECK(x <= 1);
    }
  }
}

TEST_CASE("generator is deterministic and validated") {
  const auto spec = default_benchmark_spec();
  const Benchmark a = generate_benchmark(spec.families, 5);
  const Benchmark b = generate_benchmark(spec.families, 5);
  REQUIRE(a.volumes.size() == b.volumes.size());
  CHECK(a.volumes == b.volumes);
  CHECK(a.datasets == b.datasets);
  CHECK(!(generate_benchmark(spec.families, 6).volumes[0] == a.volumes[0]));
  CHECK_THROWS_AS(generate_benchmark({spec.families[0]}, 1), ConfigError);
  std::size_t expected_datasets = 0;
  for (const OrganFamily& f : spec.families) expected_datasets += f.modalities;
  CHECK(a.datasets.size() == expected_datasets);
  for (const Volume& v : a.volumes) CHECK_NOTHROW(v.validate());
}

TEST_CASE("default benchmark layout") {
  const BenchmarkSpec spec = default_benchmark_spec();
  std::size_t sources = 0, multi = 0;
  for (const OrganFamily& f : spec.families) {
    if (f.name != spec.target) ++sources;
    if (f.modalities > 1) ++multi;
    CHECK(f.volumes == 20);
    CHECK(f.slices == 24);
  }
  CHECK(sources == 4);
  CHECK(multi >= 1);
  CHECK(spec.resolution == 32);
}

TEST_CASE("adjacent slices are closer than random cross-volume pairs") {
  const Benchmark& b = default_bench();
  Rng rng(7);
  double adjacent = 0, cross = 0;
  const int pairs = 400;
  for (int i = 0; i < pairs; ++i) {
    const Volume& v = b.volumes[rng.index(b.volumes.size())];
    const std::size_t s = rng.index(v.depth - 1);
    adjacent += slice_mse(v, s, v, s + 1);
    std::size_t a = rng.index(b.volumes.size()), c = rng.index(b.volumes.size());
    while (c == a) c = rng.index(b.volumes.size());
    cross += slice_mse(b.volumes[a], rng.index(b.volumes[a].depth), b.volumes[c],
                       rng.index(b.volumes[c].depth));
  }
  CHECK(adjacent / pairs < cross / pairs);
}

TEST_CASE("masks drift monotonically enough for stepped sampling") {
  const Benchmark& b = default_bench();
  std::size_t good = 0;
  for (const Volume& v : b.volumes) {
    double adjacent = 0;
    for (std::size_t s = 0; s + 1 < v.depth; ++s) adjacent += mask_iou(v, s, s + 1);
    adjacent /= double(v.depth - 1);
    if (adjacent > mask_iou(v, 0, v.depth - 1)) ++good;
  }
  CHECK(double(good) >= 0.9 * double(b.volumes.size()));
}

TEST_CASE("prepared datasets satisfy the normalization and presence invariants") {
  const std::vector<Dataset> all = prepare_benchmark(default_bench(), 32);
  for (const Dataset& d : all) {
    CAPTURE(d.info.id);
    CHECK(d.eligible_count() > 0);
    for (std::size_t vi = 0; vi < d.volumes.size(); ++vi) {
      const Volume& v = d.volumes[vi];
      CHECK(v.height == 32);
      for (std::size_t s : d.eligible[vi]) {
        std::size_t count = 0;
        for (std::size_t k = 0; k < v.slice_pixels(); ++k) count += v.masks[s * v.slice_pixels() + k];
        CHECK(count >= d.info.presence_threshold);
      }
    }
  }
  // Normalization before resizing: the raw volumes map to mean 0, std 1 over non-zeros.
  for (const Volume& raw : default_bench().volumes) {
    const NormalizationStats before = nonzero_stats(raw);
    const Volume n = normalize_volume(raw);
    double sum = 0, sq = 0, count = 0, worst = 0;
    for (std::size_t i = 0; i < raw.intensities.size(); ++i) {
      if (raw.intensities[i] == 0.0f) continue;
      const double x = (raw.intensities[i] - before.mean) / before.stddev;
      sum += x;
      sq += x * x;
      count += 1;
      worst = std::max(worst, std::abs(n.intensities[i] - x));
    }
    CHECK(worst < 1e-4);
    CHECK(std::abs(sum / count) < 1e-5);
    CHECK(std::abs(std::sqrt(sq / count - (sum / count) * (sum / count)) - 1.0) < 1e-5);
  }
}

TEST_CASE("MMVL round trip") {
  const Volume& v = default_bench().volumes[7];
  std::stringstream ss;
  write_volume(ss, v);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "MMVL");
  const std::size_t n = v.depth * v.height * v.width;
  CHECK(bytes.size() == 4 + 4 + 2 + v.dataset_id.size() + 4 + 2 + 12 + 5 * n);
  std::stringstream in(bytes);
  CHECK(read_volume(in) == v);
  std::stringstream cut(bytes.substr(0, bytes.size() - 1));
  CHECK_THROWS_AS(read_volume(cut), DataError);
}

TEST_CASE("benchmark directory round trip") {
  const fs::path dir = fs::temp_directory_path() / "mms_test_data_dir";
  fs::remove_all(dir);
  const Benchmark& b = default_bench();
  write_benchmark_dir(dir, b, "spleen");
  const BenchmarkDir back = read_benchmark_dir(dir);
  CHECK(back.target_organ == "spleen");
  CHECK(back.bench.datasets == b.datasets);
  CHECK(back.bench.volumes == b.volumes);
  CHECK_THROWS_AS(read_benchmark_dir(dir / "missing"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("stack builds NCHW batches") {
  const std::vector<Dataset> all = prepare_benchmark(default_bench(), 32);
  const Dataset& d = all[0];
  std::vector<SliceSample> samples{d.slice(0, d.eligible[0][0]), d.slice(1, d.eligible[1][0])};
  const Batch b = stack(samples);
  CHECK(b.images.shape() == Shape{2, 1, 32, 32});
  CHECK(b.masks.shape() == Shape{2, 1, 32, 32});
  CHECK(b.images[1024] == samples[1].image[0]);
}
