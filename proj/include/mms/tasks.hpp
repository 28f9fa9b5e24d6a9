#pragma once

#include "mms/abi.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mms/data.hpp"
#include "mms/rng.hpp"

MMS_BEGIN_NAMESPACE

enum class TaskRule { Standard, VolumeBased };

std::string to_string(TaskRule rule);
TaskRule parse_task_rule(const std::string& text);  // "standard" | "volume"

struct Task {
  std::vector<SliceSample> shots;
  std::string dataset_id;
  TaskRule rule = TaskRule::Standard;
  std::optional<std::uint32_t> volume_id;  // set iff rule == VolumeBased
};

// K indices drawn uniformly without replacement from [0, n), in draw order.
std::vector<std::size_t> choose_without_replacement(std::size_t n, std::size_t k, Rng& rng);

// K shots drawn uniformly without replacement from the pool.
// Throws InsufficientDataError when the pool holds fewer than K samples.
Task sample_standard(std::span<const SliceSample> pool, std::size_t k, Rng& rng,
                     const std::string& dataset_id = {});
// Same, over the eligible slices of every volume of a dataset.
Task sample_standard(const Dataset& dataset, std::size_t k, Rng& rng);

// Stepped positions into a list of `eligible` slices: step = ceil(eligible / k),
// positions 0, step, 2*step, ... (at most k of them).
std::vector<std::size_t> volume_step_positions(std::size_t eligible, std::size_t k);

// Shots from a single volume at the stepped positions of its eligible slices.
// Throws InsufficientDataError when no slice is eligible.
Task sample_volume_based(const Volume& v, std::span<const std::size_t> eligible, std::size_t k,
                         const std::string& dataset_id = {});
Task sample_volume_based(const Dataset& dataset, std::size_t volume_index, std::size_t k);

struct SamplingWeights {
  std::vector<std::string> dataset_ids;
  std::vector<double> probabilities;

  double at(const std::string& id) const;
};

// Raw rate 1/z per dataset, normalized to sum to one.
SamplingWeights compute_sampling_weights(const std::vector<DatasetInfo>& datasets);

// L dataset draws with replacement by `weights`, then one task per draw.
// Volume-based tasks pick a volume uniformly among those with eligible slices.
std::vector<Task> sample_meta_batch(const std::vector<Dataset>& sources,
                                    const SamplingWeights& weights, std::size_t l,
                                    std::size_t k, TaskRule rule, Rng& rng);

MMS_END_NAMESPACE
