#pragma once

#include "mms/abi.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mms/losses.hpp"
#include "mms/segnet.hpp"
#include "mms/tasks.hpp"

MMS_BEGIN_NAMESPACE

enum class UpdateRule { AW, IDW };

std::string to_string(UpdateRule rule);
UpdateRule parse_update_rule(const std::string& text);  // "aw" | "idw"

// Plain supervised training schedule: `epochs` passes over the samples in
// shuffled mini-batches, lr decayed by `lr_decay` every `decay_period` epochs.
struct TrainSchedule {
  std::size_t epochs = 20;
  std::size_t batch_size = 5;
  double lr = 0.005;
  double lr_decay = 0.7;
  std::size_t decay_period = 2;
  double weight_decay = 3e-5;
  LossParams loss{LossKind::SoftIoU};

  void validate() const;
};

struct TrainResult {
  ParamVector params;
  // Mean mini-batch loss of each epoch.
  std::vector<double> epoch_losses;
};

// Throws TrainingDivergedError (carrying `context`) on a non-finite loss or
// activation.
TrainResult train_supervised(const ParamVector& init, const std::vector<SliceSample>& samples,
                             const TrainSchedule& schedule, std::uint64_t seed,
                             const std::string& context = "supervised");

// Loss of `params` on the samples, evaluated as one batch.
double evaluate_loss(const ParamVector& params, const std::vector<SliceSample>& samples,
                     const LossParams& loss);

// Loss value and flattened parameter gradient for one batch.
struct BatchGradient {
  double loss = 0.0;
  std::vector<Scalar> grads;
};
BatchGradient batch_gradient(const ParamVector& params, const Batch& batch, const LossParams& loss);

struct MetaConfig {
  std::size_t meta_epochs = 100;
  std::size_t tasks_per_epoch = 5;
  std::size_t shots = 15;
  double inner_lr = 0.01;
  double meta_lr = 0.01;
  std::size_t inner_epochs = 4;
  std::size_t inner_batch = 5;
  double weight_decay = 0.003;
  double lr_decay = 0.7;
  std::size_t decay_period = 2;
  UpdateRule update_rule = UpdateRule::AW;
  TaskRule task_rule = TaskRule::VolumeBased;
  LossParams loss{LossKind::WeightedBCE};
  ArchDescriptor arch;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  void validate() const;
  // Inner learning rate for a meta-epoch after step decay.
  double inner_lr_at(std::size_t epoch) const;
};

// Copy of theta trained on the task's shots for cfg.inner_epochs epochs.
struct LocalResult {
  ParamVector params;
  double loss = 0.0;
};
LocalResult train_local(const ParamVector& theta, const Task& task, const MetaConfig& cfg,
                        double inner_lr, std::uint64_t seed, const std::string& context = "task");

struct TaskUpdate {
  std::vector<double> delta;  // theta_l - theta
  std::size_t task_id = 0;
  double sq_dist = 0.0;       // sum of delta_i^2
};

TaskUpdate make_task_update(const ParamVector& theta, const ParamVector& local, std::size_t task_id);

inline constexpr double kSqDistFloor = 1e-12;

// theta + beta * (1/L) * sum(delta_l)
ParamVector aggregate_aw(const ParamVector& theta, std::span<const TaskUpdate> updates, double beta);
// w_l = 1 / max(d2_l, floor), normalized to sum to one.
std::vector<double> compute_idw_weights(std::span<const TaskUpdate> updates);
// theta + beta * sum(w_l * delta_l)
ParamVector aggregate_idw(const ParamVector& theta, std::span<const TaskUpdate> updates,
                          double beta);
ParamVector aggregate_weighted(const ParamVector& theta, std::span<const TaskUpdate> updates,
                               std::span<const double> weights, double beta);

struct MetaLogRow {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double mean_sq_dist = 0.0;
  double weight_entropy = 0.0;
  UpdateRule update_rule = UpdateRule::AW;
  TaskRule task_rule = TaskRule::VolumeBased;
};

// Provenance of one sampled task.
struct TaskRecord {
  std::size_t epoch = 0;
  std::size_t index = 0;
  std::string dataset_id;
  TaskRule rule = TaskRule::Standard;
  std::optional<std::uint32_t> volume_id;
  std::vector<std::uint32_t> shot_volumes;
  std::vector<std::size_t> shot_slices;
};

struct MetaResult {
  ParamVector theta;
  std::vector<MetaLogRow> log;
  std::vector<TaskRecord> tasks;
};

// The meta-training loop. Starts from build(cfg.arch, init seed) unless an
// initial theta is supplied.
MetaResult meta_train(const std::vector<Dataset>& sources, const MetaConfig& cfg);
MetaResult meta_train(const std::vector<Dataset>& sources, const MetaConfig& cfg,
                      const ParamVector& init);

void write_meta_log_csv(std::ostream& os, const std::vector<MetaLogRow>& log);
// Columns: epoch,task,dataset_id,task_rule,volume_id,shot_volumes,shot_slices
// (the two list columns are ';'-separated).
void write_task_log_csv(std::ostream& os, const std::vector<TaskRecord>& tasks);

// Supervised fine-tuning of a (meta-)initialisation on target shots.
ParamVector fine_tune(const ParamVector& init, const std::vector<SliceSample>& shots,
                      const TrainSchedule& schedule, std::uint64_t seed);

MMS_END_NAMESPACE
