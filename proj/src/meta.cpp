#include "mms/meta.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <numeric>
#include <ostream>
#include <thread>

#include "mms/error.hpp"
#include "mms/optim.hpp"
#include "mms/rng.hpp"

MMS_BEGIN_NAMESPACE

std::string to_string(UpdateRule rule) { return rule == UpdateRule::AW ? "aw" : "idw"; }

UpdateRule parse_update_rule(const std::string& text) {
  if (text == "aw") return UpdateRule::AW;
  if (text == "idw") return UpdateRule::IDW;
  throw ConfigError("unknown update rule '" + text + "' (expected aw|idw)");
}

void TrainSchedule::validate() const {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr decay must be in (0, 1]");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be >= 0");
  loss.validate();
}

BatchGradient batch_gradient(const ParamVector& params, const Batch& batch, const LossParams& loss) {
  Tape tape;
  const BoundParams bound = bind(tape, params, true);
  const Var x = tape.constant(batch.images);
  const Var pred = forward(tape, bound, x);
  const Var l = compute_loss(tape, pred, batch.masks, loss);
  const double value = static_cast<double>(tape.value(l).item());
  if (!std::isfinite(value)) throw NumericError("non-finite loss");
  tape.backward(l);
  return {value, gather_grads(tape, bound)};
}

double evaluate_loss(const ParamVector& params, const std::vector<SliceSample>& samples,
                     const LossParams& loss) {
  const Batch batch = stack(samples);
  Tape tape;
  const BoundParams bound = bind(tape, params, false);
  const Var pred = forward(tape, bound, tape.constant(batch.images));
  return static_cast<double>(tape.value(compute_loss(tape, pred, batch.masks, loss)).item());
}

TrainResult train_supervised(const ParamVector& init, const std::vector<SliceSample>& samples,
                             const TrainSchedule& schedule, std::uint64_t seed,
                             const std::string& context) {
  schedule.validate();
  if (samples.empty()) throw InsufficientDataError(context + ": no training samples");
  TrainResult result{init, {}};
  Rng rng(seed);
  std::vector<std::size_t> order(samples.size());
  try {
    for (std::size_t epoch = 0; epoch < schedule.epochs; ++epoch) {
      const auto lr = static_cast<Scalar>(
          step_decay_lr(schedule.lr, schedule.lr_decay, schedule.decay_period, epoch));
      std::iota(order.begin(), order.end(), std::size_t{0});
      for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[rng.index(i)]);
      }
      double loss_sum = 0.0;
      std::size_t batches = 0;
      for (std::size_t start = 0; start < order.size(); start += schedule.batch_size) {
        std::vector<SliceSample> chunk;
        for (std::size_t i = start; i < std::min(order.size(), start + schedule.batch_size); ++i) {
          chunk.push_back(samples[order[i]]);
        }
        const BatchGradient g = batch_gradient(result.params, stack(chunk), schedule.loss);
        sgd_step(result.params.values(), g.grads, lr, static_cast<Scalar>(schedule.weight_decay));
        loss_sum += g.loss;
        ++batches;
      }
      result.epoch_losses.push_back(loss_sum / static_cast<double>(batches));
    }
  } catch (const NumericError& e) {
    throw TrainingDivergedError(std::string("training diverged: ") + e.what(), context);
  }
  for (Scalar v : result.params.values()) {
    if (!std::isfinite(v)) throw TrainingDivergedError("non-finite parameter after training", context);
  }
  return result;
}

void MetaConfig::validate() const {
  if (meta_epochs < 1 || tasks_per_epoch < 1 || shots < 1) {
    throw ConfigError("meta_epochs, tasks_per_epoch and shots must be >= 1");
  }
  if (!(inner_lr > 0.0) || !(meta_lr > 0.0)) throw ConfigError("inner_lr and meta_lr must be > 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must be in (0, 1]");
  if (inner_batch < 1) throw ConfigError("inner_batch must be >= 1");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  loss.validate();
  arch.validate();
}

double MetaConfig::inner_lr_at(std::size_t epoch) const {
  return step_decay_lr(inner_lr, lr_decay, decay_period, epoch);
}

LocalResult train_local(const ParamVector& theta, const Task& task, const MetaConfig& cfg,
                        double inner_lr, std::uint64_t seed, const std::string& context) {
  if (task.shots.empty()) throw InsufficientDataError(context + ": empty task");
  if (cfg.inner_epochs == 0) {
    return {theta, evaluate_loss(theta, task.shots, cfg.loss)};
  }
  TrainSchedule schedule;
  schedule.epochs = cfg.inner_epochs;
  schedule.batch_size = cfg.inner_batch;
  schedule.lr = inner_lr;
  schedule.lr_decay = 1.0;
  schedule.decay_period = 0;
  schedule.weight_decay = cfg.weight_decay;
  schedule.loss = cfg.loss;
  TrainResult r = train_supervised(theta, task.shots, schedule, seed, context);
  return {std::move(r.params), r.epoch_losses.back()};
}

TaskUpdate make_task_update(const ParamVector& theta, const ParamVector& local,
                            std::size_t task_id) {
  if (theta.size() != local.size()) {
    throw DimensionError("task update: " + std::to_string(theta.size()) + " vs " +
                         std::to_string(local.size()) + " parameters");
  }
  TaskUpdate u{std::vector<double>(theta.size()), task_id, 0.0};
  for (std::size_t i = 0; i < theta.size(); ++i) {
    u.delta[i] = static_cast<double>(local[i]) - static_cast<double>(theta[i]);
    u.sq_dist += u.delta[i] * u.delta[i];
  }
  return u;
}

ParamVector aggregate_weighted(const ParamVector& theta, std::span<const TaskUpdate> updates,
                               std::span<const double> weights, double beta) {
  if (updates.empty()) throw ConfigError("aggregation needs at least one task update");
  if (weights.size() != updates.size()) {
    throw DimensionError("aggregation: " + std::to_string(weights.size()) + " weights for " +
                         std::to_string(updates.size()) + " updates");
  }
  std::vector<double> step(theta.size(), 0.0);
  for (std::size_t l = 0; l < updates.size(); ++l) {
    if (updates[l].delta.size() != theta.size()) {
      throw DimensionError("aggregation: update " + std::to_string(l) + " has wrong length");
    }
    for (std::size_t i = 0; i < step.size(); ++i) step[i] += weights[l] * updates[l].delta[i];
  }
  ParamVector out = theta;
  for (std::size_t i = 0; i < step.size(); ++i) {
    out[i] = static_cast<Scalar>(static_cast<double>(theta[i]) + beta * step[i]);
  }
  return out;
}

ParamVector aggregate_aw(const ParamVector& theta, std::span<const TaskUpdate> updates,
                         double beta) {
  const std::vector<double> w(updates.size(), 1.0 / static_cast<double>(updates.size()));
  return aggregate_weighted(theta, updates, w, beta);
}

std::vector<double> compute_idw_weights(std::span<const TaskUpdate> updates) {
  if (updates.empty()) throw ConfigError("IDW weights need at least one task update");
  std::vector<double> w;
  w.reserve(updates.size());
  for (const TaskUpdate& u : updates) w.push_back(1.0 / std::max(u.sq_dist, kSqDistFloor));
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) x /= total;
  return w;
}

ParamVector aggregate_idw(const ParamVector& theta, std::span<const TaskUpdate> updates,
                          double beta) {
  return aggregate_weighted(theta, updates, compute_idw_weights(updates), beta);
}

namespace {

double entropy(const std::vector<double>& w) {
  double h = 0.0;
  for (double x : w) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return h;
}

std::vector<LocalResult> train_tasks(const ParamVector& theta, const std::vector<Task>& tasks,
                                     const MetaConfig& cfg, std::size_t epoch) {
  std::vector<LocalResult> results(tasks.size());
  const double lr = cfg.inner_lr_at(epoch);
  auto run_one = [&](std::size_t l) {
    const std::string context = "epoch " + std::to_string(epoch) + ", task " + std::to_string(l) +
                                " (" + tasks[l].dataset_id + ")";
    results[l] = train_local(theta, tasks[l], cfg, lr, derive_seed(cfg.seed, epoch, l), context);
  };
  const std::size_t workers = std::min(cfg.workers, tasks.size());
  if (workers <= 1) {
    for (std::size_t l = 0; l < tasks.size(); ++l) run_one(l);
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(tasks.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t l = next++; l < tasks.size(); l = next++) {
        try {
          run_one(l);
        } catch (...) {
          errors[l] = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

}  // namespace

MetaResult meta_train(const std::vector<Dataset>& sources, const MetaConfig& cfg) {
  cfg.validate();
  return meta_train(sources, cfg, build(cfg.arch, derive_seed(cfg.seed, "init")));
}

MetaResult meta_train(const std::vector<Dataset>& sources, const MetaConfig& cfg,
                      const ParamVector& init) {
  cfg.validate();
  if (sources.empty()) throw ConfigError("meta-training needs at least one source dataset");
  if (!(init.arch() == cfg.arch)) {
    throw ConfigError("initial parameters " + init.arch().to_string() + " do not match config " +
                      cfg.arch.to_string());
  }
  std::vector<DatasetInfo> infos;
  for (const Dataset& d : sources) infos.push_back(d.info);
  const SamplingWeights weights = compute_sampling_weights(infos);
  Rng task_rng(derive_seed(cfg.seed, "tasks"));

  MetaResult result{init, {}, {}};
  for (std::size_t epoch = 0; epoch < cfg.meta_epochs; ++epoch) {
    std::vector<Task> tasks = sample_meta_batch(sources, weights, cfg.tasks_per_epoch, cfg.shots,
                                                cfg.task_rule, task_rng);
    const std::vector<LocalResult> locals = train_tasks(result.theta, tasks, cfg, epoch);

    std::vector<TaskUpdate> updates;
    MetaLogRow row{epoch, 0.0, 0.0, 0.0, cfg.update_rule, cfg.task_rule};
    for (std::size_t l = 0; l < locals.size(); ++l) {
      updates.push_back(make_task_update(result.theta, locals[l].params, l));
      row.mean_loss += locals[l].loss;
      row.mean_sq_dist += updates.back().sq_dist;
    }
    row.mean_loss /= static_cast<double>(locals.size());
    row.mean_sq_dist /= static_cast<double>(locals.size());

    std::vector<double> w = cfg.update_rule == UpdateRule::AW
                                ? std::vector<double>(updates.size(), 1.0 / static_cast<double>(updates.size()))
                                : compute_idw_weights(updates);
    row.weight_entropy = entropy(w);
    result.theta = aggregate_weighted(result.theta, updates, w, cfg.meta_lr);
    result.log.push_back(row);
    spdlog::debug("meta-epoch {}: loss {:.4f}, mean d2 {:.4g}, H(w) {:.4f}", epoch, row.mean_loss,
                  row.mean_sq_dist, row.weight_entropy);
    for (std::size_t l = 0; l < tasks.size(); ++l) {
      TaskRecord rec{epoch, l, tasks[l].dataset_id, tasks[l].rule, tasks[l].volume_id, {}, {}};
      for (const SliceSample& s : tasks[l].shots) {
        if (tasks[l].rule == TaskRule::VolumeBased && s.volume_id != *tasks[l].volume_id) {
          throw ProtocolError("volume-based task mixes volumes " +
                              std::to_string(*tasks[l].volume_id) + " and " +
                              std::to_string(s.volume_id));
        }
        rec.shot_volumes.push_back(s.volume_id);
        rec.shot_slices.push_back(s.slice_index);
      }
      result.tasks.push_back(std::move(rec));
    }
  }
  return result;
}

void write_meta_log_csv(std::ostream& os, const std::vector<MetaLogRow>& log) {
  os << "epoch,mean_loss,mean_sq_dist,weight_entropy,update_rule,task_rule\n";
  char buf[160];
  for (const MetaLogRow& r : log) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,", r.epoch, r.mean_loss, r.mean_sq_dist,
                  r.weight_entropy);
    os << buf << to_string(r.update_rule) << ',' << to_string(r.task_rule) << '\n';
  }
}

void write_task_log_csv(std::ostream& os, const std::vector<TaskRecord>& tasks) {
  os << "epoch,task,dataset_id,task_rule,volume_id,shot_volumes,shot_slices\n";
  for (const TaskRecord& t : tasks) {
    os << t.epoch << ',' << t.index << ',' << t.dataset_id << ',' << to_string(t.rule) << ',';
    if (t.volume_id) os << *t.volume_id;
    os << ',';
    for (std::size_t i = 0; i < t.shot_volumes.size(); ++i) os << (i ? ";" : "") << t.shot_volumes[i];
    os << ',';
    for (std::size_t i = 0; i < t.shot_slices.size(); ++i) os << (i ? ";" : "") << t.shot_slices[i];
    os << '\n';
  }
}

ParamVector fine_tune(const ParamVector& init, const std::vector<SliceSample>& shots,
                      const TrainSchedule& schedule, std::uint64_t seed) {
  if (shots.empty()) throw InsufficientDataError("fine-tuning needs at least one shot");
  return train_supervised(init, shots, schedule, seed, "fine-tune").params;
}

MMS_END_NAMESPACE
