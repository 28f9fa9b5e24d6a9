#pragma once

#include "mms/abi.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mms/meta.hpp"

MMS_BEGIN_NAMESPACE

enum class Method { RandomInit, Transfer, MetaAW, MetaIDW };

std::string to_string(Method m);
Method parse_method(const std::string& text);  // random-init | transfer | meta-aw | meta-idw

struct ProtocolConfig {
  // Fine-tune/evaluate repetitions with independent shot selections.
  std::size_t selections = 5;
  // Shots per selection; 0 means the whole fine-tune pool.
  std::size_t shots = 15;
  // Fraction of target volumes assigned to the fine-tune pool.
  double finetune_fraction = 0.5;
  TrainSchedule finetune{20, 5, 0.005, 0.7, 2, 3e-5, LossParams{LossKind::SoftIoU}};
  TrainSchedule transfer{20, 5, 0.001, 1.0, 0, 3e-5, LossParams{LossKind::WeightedBCE}};
  MetaConfig meta;
  std::uint64_t seed = 0;

  void validate() const;
};

// Volume-disjoint split of the target dataset into fine-tune and test pools.
struct TargetSplit {
  std::vector<std::size_t> finetune_volumes;  // indices into Dataset::volumes
  std::vector<std::size_t> test_volumes;
};

// Throws ProtocolError if either side would be empty.
TargetSplit split_target(const Dataset& target, double finetune_fraction, std::uint64_t seed);
// Throws ProtocolError when the two sides share a volume id.
void assert_disjoint(const Dataset& target, const TargetSplit& split);

// Eligible slices of the listed volumes.
std::vector<SliceSample> pool_slices(const Dataset& dataset, std::span<const std::size_t> volumes);

// Mean per-image IoU (percent) of `params` over the samples.
double evaluate_iou(const ParamVector& params, const std::vector<SliceSample>& samples,
                    std::size_t batch_size = 32);

struct ExperimentResult {
  Method method = Method::RandomInit;
  TaskRule task_rule = TaskRule::VolumeBased;
  LossKind meta_loss = LossKind::WeightedBCE;
  std::vector<std::uint64_t> seeds;
  std::vector<double> iou;  // percent, one per selection
  double mean = 0.0;
  double stddev = 0.0;
};

// Recomputes mean and (population) standard deviation from `iou`.
void summarize(ExperimentResult& r);

// Plain supervised training on the pooled eligible slices of all sources.
// Throws ProtocolError if any source shares the target organ.
TrainResult train_transfer_baseline(const std::vector<Dataset>& sources,
                                    const TrainSchedule& schedule, const ParamVector& init,
                                    std::uint64_t seed, const std::string& target_organ = {});

// Fine-tunes `init` on `selections` random shot selections from the fine-tune
// pool and evaluates each on the full test pool.
ExperimentResult finetune_and_evaluate(const ParamVector& init, const Dataset& target,
                                       const TargetSplit& split, const ProtocolConfig& cfg,
                                       Method method);

// Obtains an initialisation per method, then runs finetune_and_evaluate.
std::vector<ExperimentResult> run_protocol(const std::vector<Dataset>& sources,
                                           const Dataset& target, std::span<const Method> methods,
                                           const ProtocolConfig& cfg);

// Update rule x task rule x loss grid of meta-trained inits, each evaluated
// with the fine-tune protocol.
std::vector<ExperimentResult> run_ablation(const std::vector<Dataset>& sources,
                                           const Dataset& target, const ProtocolConfig& cfg,
                                           std::span<const LossKind> losses);

// Columns: method,task_rule,update_rule,seed,iou
void write_results_csv(std::ostream& os, std::span<const ExperimentResult> results);
// Same plus a meta_loss column after update_rule.
void write_ablation_csv(std::ostream& os, std::span<const ExperimentResult> results);

struct DistanceMatrix {
  std::vector<std::string> dataset_ids;
  std::vector<double> distances;  // row-major n x n

  std::size_t size() const noexcept { return dataset_ids.size(); }
  double at(std::size_t a, std::size_t b) const { return distances[a * size() + b]; }
};

double slice_distance(const SliceSample& a, const SliceSample& b);

// Mean Euclidean distance between random eligible slices of each pair of
// datasets, averaged over both draw orders. The diagonal is 0.
DistanceMatrix distance_heatmap(const std::vector<Dataset>& datasets, std::size_t pairs_per_cell,
                                std::uint64_t seed);

// Mean distance between random eligible slices of two different volumes of
// the same dataset (one value per dataset).
std::vector<double> within_dataset_distances(const std::vector<Dataset>& datasets,
                                             std::size_t pairs, std::uint64_t seed);

void write_heatmap_csv(std::ostream& os, const DistanceMatrix& m);
// Binary 8-bit PGM, min-max scaled.
void write_heatmap_pgm(std::ostream& os, const DistanceMatrix& m);

MMS_END_NAMESPACE
