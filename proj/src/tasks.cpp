#include "mms/tasks.hpp"

#include <cmath>
#include <numeric>

#include "mms/error.hpp"

MMS_BEGIN_NAMESPACE

std::string to_string(TaskRule rule) {
  return rule == TaskRule::Standard ? "standard" : "volume";
}

TaskRule parse_task_rule(const std::string& text) {
  if (text == "standard") return TaskRule::Standard;
  if (text == "volume" || text == "volume-based") return TaskRule::VolumeBased;
  throw ConfigError("unknown task rule '" + text + "' (expected standard|volume)");
}

std::vector<std::size_t> choose_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  if (k > n) {
    throw InsufficientDataError("cannot draw " + std::to_string(k) + " shots from a pool of " +
                                std::to_string(n));
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.index(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

Task sample_standard(std::span<const SliceSample> pool, std::size_t k, Rng& rng,
                     const std::string& dataset_id) {
  Task task{{}, dataset_id, TaskRule::Standard, std::nullopt};
  for (std::size_t i : choose_without_replacement(pool.size(), k, rng)) {
    task.shots.push_back(pool[i]);
  }
  return task;
}

Task sample_standard(const Dataset& dataset, std::size_t k, Rng& rng) {
  std::vector<std::pair<std::size_t, std::size_t>> pool;
  for (std::size_t v = 0; v < dataset.volumes.size(); ++v) {
    for (std::size_t s : dataset.eligible[v]) pool.emplace_back(v, s);
  }
  Task task{{}, dataset.info.id, TaskRule::Standard, std::nullopt};
  for (std::size_t i : choose_without_replacement(pool.size(), k, rng)) {
    task.shots.push_back(dataset.slice(pool[i].first, pool[i].second));
  }
  return task;
}

std::vector<std::size_t> volume_step_positions(std::size_t eligible, std::size_t k) {
  if (k == 0) throw ConfigError("shots per task must be >= 1");
  std::vector<std::size_t> positions;
  if (eligible == 0) return positions;
  const std::size_t step = (eligible + k - 1) / k;
  for (std::size_t p = 0; p < eligible && positions.size() < k; p += step) positions.push_back(p);
  return positions;
}

Task sample_volume_based(const Volume& v, std::span<const std::size_t> eligible, std::size_t k,
                         const std::string& dataset_id) {
  if (eligible.empty()) {
    throw InsufficientDataError("volume " + v.dataset_id + "/" + std::to_string(v.volume_id) +
                                " has no eligible slices");
  }
  Task task{{}, dataset_id.empty() ? v.dataset_id : dataset_id, TaskRule::VolumeBased,
            v.volume_id};
  for (std::size_t p : volume_step_positions(eligible.size(), k)) {
    task.shots.push_back(extract_slice(v, eligible[p]));
  }
  return task;
}

Task sample_volume_based(const Dataset& dataset, std::size_t volume_index, std::size_t k) {
  return sample_volume_based(dataset.volumes.at(volume_index), dataset.eligible.at(volume_index),
                             k, dataset.info.id);
}

double SamplingWeights::at(const std::string& id) const {
  for (std::size_t i = 0; i < dataset_ids.size(); ++i) {
    if (dataset_ids[i] == id) return probabilities[i];
  }
  throw ConfigError("no sampling weight for dataset '" + id + "'");
}

SamplingWeights compute_sampling_weights(const std::vector<DatasetInfo>& datasets) {
  if (datasets.empty()) throw ConfigError("no source datasets to sample from");
  SamplingWeights w;
  double total = 0.0;
  for (const DatasetInfo& d : datasets) {
    if (d.modality_count < 1) throw ConfigError("dataset " + d.id + " has z < 1");
    w.dataset_ids.push_back(d.id);
    w.probabilities.push_back(1.0 / d.modality_count);
    total += w.probabilities.back();
  }
  for (double& p : w.probabilities) p /= total;
  return w;
}

std::vector<Task> sample_meta_batch(const std::vector<Dataset>& sources,
                                    const SamplingWeights& weights, std::size_t l,
                                    std::size_t k, TaskRule rule, Rng& rng) {
  if (l < 1) throw ConfigError("tasks per meta-batch must be >= 1");
  if (weights.probabilities.size() != sources.size()) {
    throw ConfigError("sampling weights cover " + std::to_string(weights.probabilities.size()) +
                      " datasets, sources have " + std::to_string(sources.size()));
  }
  std::vector<Task> tasks;
  tasks.reserve(l);
  for (std::size_t i = 0; i < l; ++i) {
    // Inverse-CDF draw; the last positive-weight dataset absorbs rounding.
    const double u = rng.uniform();
    std::size_t chosen = sources.size();
    double acc = 0.0;
    for (std::size_t d = 0; d < sources.size(); ++d) {
      if (weights.probabilities[d] <= 0.0) continue;
      acc += weights.probabilities[d];
      chosen = d;
      if (u < acc) break;
    }
    if (chosen == sources.size()) throw ConfigError("all sampling weights are zero");
    const Dataset& ds = sources[chosen];
    if (rule == TaskRule::Standard) {
      tasks.push_back(sample_standard(ds, k, rng));
    } else {
      std::vector<std::size_t> usable;
      for (std::size_t v = 0; v < ds.volumes.size(); ++v) {
        if (!ds.eligible[v].empty()) usable.push_back(v);
      }
      if (usable.empty()) {
        throw InsufficientDataError("dataset " + ds.info.id + " has no volume with eligible slices");
      }
      tasks.push_back(sample_volume_based(ds, usable[rng.index(usable.size())], k));
    }
  }
  return tasks;
}

MMS_END_NAMESPACE
