#include <doctest.h>

#include <map>
#include <set>

#include "mms/error.hpp"
#include "mms/rng.hpp"
#include "mms/tasks.hpp"

using namespace mms;

namespace {

// Volume whose slice s carries intensity s everywhere, so shots reveal their origin.
Volume ramp_volume(const std::string& id, std::uint32_t vid, std::size_t depth) {
  Volume v;
  v.dataset_id = id;
  v.volume_id = vid;
  v.depth = depth;
  v.height = v.width = 4;
  v.intensities.resize(depth * 16);
  v.masks.assign(depth * 16, 1);
  for (std::size_t s = 0; s < depth; ++s) {
    for (std::size_t i = 0; i < 16; ++i) v.intensities[s * 16 + i] = float(s);
  }
  return v;
}

Dataset toy_dataset(const std::string& id, std::uint16_t z, std::size_t volumes, std::size_t depth) {
  Dataset d;
  d.info = {id, id, z, 0};
  for (std::size_t v = 0; v < volumes; ++v) {
    d.volumes.push_back(ramp_volume(id, std::uint32_t(100 + v), depth));
    std::vector<std::size_t> all(depth);
    for (std::size_t s = 0; s < depth; ++s) all[s] = s;
    d.eligible.push_back(all);
  }
  return d;
}

std::vector<std::size_t> slice_indices(const Task& t) {
  std::vector<std::size_t> out;
  for (const SliceSample& s : t.shots) out.push_back(s.slice_index);
  return out;
}

std::vector<SliceSample> toy_pool(std::size_t n) {
  std::vector<SliceSample> pool(n);
  for (std::size_t i = 0; i < n; ++i) {
    pool[i].slice_index = i;
    pool[i].image = Tensor({1, 1, 1});
    pool[i].mask = Tensor({1, 1, 1});
  }
  return pool;
}

}  // namespace

TEST_CASE("rule names") {
  CHECK(parse_task_rule("standard") == TaskRule::Standard);
  CHECK(parse_task_rule("volume") == TaskRule::VolumeBased);
  CHECK(to_string(TaskRule::VolumeBased) == "volume");
  CHECK_THROWS_AS(parse_task_rule("random"), ConfigError);
}

TEST_CASE("standard sampling") {
  const auto pool = toy_pool(15);
  Rng a(1), b(1);
  const Task whole = sample_standard(pool, 15, a);
  std::set<std::size_t> seen;
  for (std::size_t i : slice_indices(whole)) seen.insert(i);
  CHECK(seen.size() == 15);
  CHECK(whole.rule == TaskRule::Standard);
  CHECK(!whole.volume_id);

  Rng c(9), d(9);
  const auto big = toy_pool(100);
  CHECK(slice_indices(sample_standard(big, 15, c)) == slice_indices(sample_standard(big, 15, d)));
  CHECK_THROWS_AS(sample_standard(pool, 16, b), InsufficientDataError);
}

TEST_CASE("standard sampling is uniform") {
  const auto pool = toy_pool(100);
  std::vector<int> hits(100, 0);
  Rng rng(2);
  const int draws = 1000;
  for (int i = 0; i < draws; ++i) {
    const Task t = sample_standard(pool, 15, rng);
    std::set<std::size_t> uniq;
    for (std::size_t s : slice_indices(t)) {
      ++hits[s];
      uniq.insert(s);
    }
    CHECK(uniq.size() == 15);
  }
  for (int h : hits) {
    const double freq = double(h) / draws;
    CHECK(freq > 0.15 * 0.7);
    CHECK(freq < 0.15 * 1.3);
  }
}

TEST_CASE("standard tasks stay within one dataset") {
  const Dataset d = toy_dataset("liver", 1, 4, 10);
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const Task t = sample_standard(d, 15, rng);
    CHECK(t.dataset_id == "liver");
    CHECK(t.shots.size() == 15);
  }
}

TEST_CASE("volume-based step positions") {
  std::vector<std::size_t> expect;
  for (std::size_t i = 0; i <= 28; i += 2) expect.push_back(i);
  CHECK(volume_step_positions(30, 15) == expect);
  CHECK(volume_step_positions(15, 15).size() == 15);
  CHECK(volume_step_positions(10, 15) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK(volume_step_positions(0, 15).empty());
}

TEST_CASE("volume-based shot counts") {
  for (std::size_t k = 1; k <= 20; ++k) {
    for (std::size_t n = 1; n <= 120; ++n) {
      const auto pos = volume_step_positions(n, k);
      CAPTURE(k);
      CAPTURE(n);
      // Strictly increasing with a fixed step, starting at 0.
      REQUIRE(!pos.empty());
      CHECK(pos[0] == 0);
      const std::size_t step = (n + k - 1) / k;
      for (std::size_t i = 1; i < pos.size(); ++i) CHECK(pos[i] - pos[i - 1] == step);
      CHECK(pos.back() < n);
      CHECK(pos.size() <= k);
      if (n <= k) CHECK(pos.size() == n);
      // Exact K when K divides |V|; otherwise more than K/2.
      if (n >= k && n % k == 0) CHECK(pos.size() == k);
      if (n >= k) CHECK(2 * pos.size() > k);
    }
  }
  // The ceiling step can leave a task short even when |V| > K.
  CHECK(volume_step_positions(31, 15).size() == 11);
}

TEST_CASE("volume-based sampling uses one volume deterministically") {
  const Dataset d = toy_dataset("kidney", 1, 3, 30);
  const Task t = sample_volume_based(d, 1, 15);
  CHECK(t.rule == TaskRule::VolumeBased);
  REQUIRE(t.volume_id);
  CHECK(*t.volume_id == 101);
  for (const SliceSample& s : t.shots) CHECK(s.volume_id == 101);
  std::vector<std::size_t> expect;
  for (std::size_t i = 0; i <= 28; i += 2) expect.push_back(i);
  CHECK(slice_indices(t) == expect);
  // Shot images are the requested slices.
  CHECK(t.shots[3].image[0] == 6.0f);
  CHECK(slice_indices(sample_volume_based(d, 1, 15)) == expect);

  Dataset sparse = toy_dataset("kidney", 1, 1, 30);
  sparse.eligible[0] = {3, 7, 8, 20};
  CHECK(slice_indices(sample_volume_based(sparse, 0, 2)) == std::vector<std::size_t>{3, 8});
  sparse.eligible[0].clear();
  CHECK_THROWS_AS(sample_volume_based(sparse, 0, 2), InsufficientDataError);
}

TEST_CASE("sampling weights") {
  const SamplingWeights w = compute_sampling_weights({{"A", "a", 1}, {"B1", "b", 2}, {"B2", "b", 2}});
  CHECK(w.at("A") == doctest::Approx(0.5));
  CHECK(w.at("B1") == doctest::Approx(0.25));
  CHECK(w.at("B2") == doctest::Approx(0.25));
  const SamplingWeights u = compute_sampling_weights({{"A", "a", 1}, {"B", "b", 1}, {"C", "c", 1}, {"D", "d", 1}});
  for (double p : u.probabilities) CHECK(p == doctest::Approx(0.25));
  CHECK(compute_sampling_weights({{"A", "a", 3}}).probabilities[0] == 1.0);
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    std::vector<DatasetInfo> infos;
    const std::size_t n = 1 + rng.index(8);
    for (std::size_t j = 0; j < n; ++j) infos.push_back({std::to_string(j), "o", std::uint16_t(1 + rng.index(12))});
    const SamplingWeights r = compute_sampling_weights(infos);
    double total = 0;
    for (double p : r.probabilities) {
      CHECK(p >= 0.0);
      total += p;
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("meta-batch sampling") {
  const std::vector<Dataset> sources = {toy_dataset("A", 1, 2, 20), toy_dataset("B1", 2, 2, 20),
                                        toy_dataset("B2", 2, 2, 20)};
  std::vector<DatasetInfo> infos;
  for (const Dataset& d : sources) infos.push_back(d.info);
  const SamplingWeights w = compute_sampling_weights(infos);
  Rng rng(5);
  const auto batch = sample_meta_batch(sources, w, 5, 15, TaskRule::VolumeBased, rng);
  CHECK(batch.size() == 5);
  for (const Task& t : batch) {
    CHECK(t.shots.size() <= 15);
    for (const SliceSample& s : t.shots) CHECK(s.volume_id == *t.volume_id);
  }

  SamplingWeights only_first = w;
  only_first.probabilities = {1.0, 0.0, 0.0};
  for (const Task& t : sample_meta_batch(sources, only_first, 20, 5, TaskRule::Standard, rng)) {
    CHECK(t.dataset_id == "A");
  }

  Rng a(6), b(6);
  const auto x = sample_meta_batch(sources, w, 5, 15, TaskRule::Standard, a);
  const auto y = sample_meta_batch(sources, w, 5, 15, TaskRule::Standard, b);
  for (std::size_t i = 0; i < 5; ++i) CHECK(slice_indices(x[i]) == slice_indices(y[i]));
}

TEST_CASE("empirical dataset frequencies follow the weights") {
  const std::vector<Dataset> sources = {toy_dataset("A", 1, 1, 16), toy_dataset("B1", 2, 1, 16),
                                        toy_dataset("B2", 2, 1, 16), toy_dataset("C", 1, 1, 16)};
  std::vector<DatasetInfo> infos;
  for (const Dataset& d : sources) infos.push_back(d.info);
  const SamplingWeights w = compute_sampling_weights(infos);
  std::map<std::string, double> counts;
  Rng rng(7);
  const int batches = 2000;
  for (int i = 0; i < batches; ++i) {
    for (const Task& t : sample_meta_batch(sources, w, 5, 4, TaskRule::VolumeBased, rng)) {
      counts[t.dataset_id] += 1;
    }
  }
  for (std::size_t d = 0; d < sources.size(); ++d) {
    const double freq = counts[w.dataset_ids[d]] / (5.0 * batches);
    CAPTURE(w.dataset_ids[d]);
    CHECK(std::abs(freq - w.probabilities[d]) <= 0.1 * w.probabilities[d]);
  }
}
