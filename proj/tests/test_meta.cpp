#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mms/error.hpp"
#include "mms/meta.hpp"
#include "mms/optim.hpp"
#include "mms/synth.hpp"

using namespace mms;

namespace {

ParamVector vec(std::vector<Scalar> v) {
  // Aggregation never looks at the architecture, only at the values.
  ArchDescriptor arch{1, 1, 0, 1};
  v.resize(arch.param_count(), 0);
  return ParamVector(arch, std::move(v));
}

TaskUpdate update(const ParamVector& theta, std::vector<Scalar> local, std::size_t id) {
  return make_task_update(theta, vec(std::move(local)), id);
}

// Small benchmark and network for fast end-to-end checks.
const std::vector<Dataset>& small_sources() {
  static const std::vector<Dataset> sources = [] {
    BenchmarkSpec spec = default_benchmark_spec();
    std::vector<OrganFamily> fams;
    for (OrganFamily f : spec.families) {
      f.volumes = 4;
      f.slices = 12;
      f.size = 32;
      f.presence_threshold = 4;
      if (f.name != spec.target) fams.push_back(f);
    }
    return prepare_benchmark(generate_benchmark(fams, 77), 16);
  }();
  return sources;
}

MetaConfig small_config() {
  MetaConfig cfg;
  cfg.arch = ArchDescriptor{1, 4, 2, 1};
  cfg.meta_epochs = 3;
  cfg.tasks_per_epoch = 3;
  cfg.shots = 5;
  cfg.inner_epochs = 2;
  cfg.inner_batch = 2;
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST_CASE("AW aggregation") {
  const ParamVector theta = vec({0, 0});
  const std::vector<TaskUpdate> two = {update(theta, {1, 0}, 0), update(theta, {0, 1}, 1)};
  const ParamVector out = aggregate_aw(theta, two, 1.0);
  CHECK(out[0] == doctest::Approx(0.5));
  CHECK(out[1] == doctest::Approx(0.5));

  const ParamVector local = vec({0.3f, -1.7f});
  const ParamVector base = vec({0.1f, 0.2f});
  const std::vector<TaskUpdate> one = {make_task_update(base, local, 0)};
  CHECK(aggregate_aw(base, one, 1.0) == local);

  const std::vector<TaskUpdate> none = {update(theta, {0, 0}, 0), update(theta, {0, 0}, 1)};
  CHECK(aggregate_aw(theta, none, 0.7) == theta);
  CHECK_THROWS_AS(aggregate_aw(theta, {}, 1.0), ConfigError);
}

TEST_CASE("task update distances") {
  const ParamVector theta = vec({1, 2, 3});
  const TaskUpdate u = update(theta, {2, 0, 3}, 4);
  CHECK(u.task_id == 4);
  CHECK(u.sq_dist == doctest::Approx(5.0));
  double s = 0;
  for (double d : u.delta) s += d * d;
  CHECK(u.sq_dist == s);
}

TEST_CASE("IDW weights") {
  const ParamVector theta = vec({0});
  const std::vector<TaskUpdate> ups = {update(theta, {1}, 0), update(theta, {2}, 1)};
  const std::vector<double> w = compute_idw_weights(ups);
  CHECK(w[0] == 0.8);
  CHECK(w[1] == 0.2);
  CHECK(aggregate_idw(theta, ups, 1.0)[0] == doctest::Approx(1.2));

  const std::vector<TaskUpdate> single = {update(vec({0, 0}), {1, 1}, 0)};
  const ParamVector moved = aggregate_idw(vec({0, 0}), single, 1.0);
  CHECK(moved[0] == 1.0);
  CHECK(moved[1] == 1.0);

  const std::vector<TaskUpdate> stuck = {update(theta, {0}, 0), update(theta, {1}, 1),
                                         update(theta, {3}, 2)};
  const std::vector<double> ws = compute_idw_weights(stuck);
  CHECK(ws[0] > 1.0 - 1e-11);
  CHECK(ws[1] < 1e-11);
  CHECK(ws[2] < 1e-11);
}

TEST_CASE("aggregation properties on random updates") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.index(6), l = 1 + rng.index(6);
    std::vector<Scalar> t(n);
    for (auto& v : t) v = static_cast<Scalar>(rng.uniform(-1, 1));
    const ParamVector theta = vec(t);
    std::vector<TaskUpdate> ups;
    for (std::size_t k = 0; k < l; ++k) {
      std::vector<Scalar> local = t;
      for (auto& v : local) v += static_cast<Scalar>(rng.uniform(-0.5, 0.5));
      ups.push_back(update(theta, local, k));
    }
    const double beta = rng.uniform(0.1, 1.0);

    const std::vector<double> w = compute_idw_weights(ups);
    double total = 0;
    for (double x : w) total += x;
    CHECK(std::abs(total - 1.0) < 1e-9);

    // Scaling every distance leaves the normalized weights unchanged.
    std::vector<TaskUpdate> scaled = ups;
    for (TaskUpdate& u : scaled) u.sq_dist *= 37.5;
    const std::vector<double> ws = compute_idw_weights(scaled);
    for (std::size_t k = 0; k < l; ++k) CHECK(std::abs(ws[k] - w[k]) < 1e-12);

    // Permuting the task list leaves both updates unchanged.
    std::vector<TaskUpdate> perm = ups;
    std::reverse(perm.begin(), perm.end());
    if (l > 2) std::swap(perm[0], perm[1]);
    const ParamVector aw = aggregate_aw(theta, ups, beta), awp = aggregate_aw(theta, perm, beta);
    const ParamVector idw = aggregate_idw(theta, ups, beta), idwp = aggregate_idw(theta, perm, beta);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      CHECK(std::abs(double(aw[i]) - double(awp[i])) < 1e-6);
      CHECK(std::abs(double(idw[i]) - double(idwp[i])) < 1e-6);
    }

    // Equal distances make IDW and AW coincide.
    std::vector<TaskUpdate> equal = ups;
    for (TaskUpdate& u : equal) u.sq_dist = 0.25;
    const ParamVector a = aggregate_aw(theta, equal, beta), b = aggregate_idw(theta, equal, beta);
    for (std::size_t i = 0; i < theta.size(); ++i) CHECK(std::abs(double(a[i]) - double(b[i])) < 1e-9);

    // Reptile fixed point: one task, beta = 1.
    const std::vector<TaskUpdate> one = {ups[0]};
    const ParamVector fixed = aggregate_idw(theta, one, 1.0);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      CHECK(fixed[i] == static_cast<Scalar>(double(theta[i]) + ups[0].delta[i]));
    }
  }
}

TEST_CASE("train_local") {
  const auto& sources = small_sources();
  MetaConfig cfg = small_config();
  const ParamVector theta = build(cfg.arch, 5);
  const ParamVector copy = theta;
  const Task task = sample_volume_based(sources[0], 0, 5);

  cfg.inner_epochs = 0;
  CHECK(train_local(theta, task, cfg, 0.01, 1).params == theta);

  // One step on one shot equals sgd_step on that shot's gradient.
  Task single = task;
  single.shots.resize(1);
  cfg.inner_epochs = 1;
  cfg.inner_batch = 4;
  const LocalResult stepped = train_local(theta, single, cfg, 0.02, 1);
  ParamVector manual = theta;
  const BatchGradient g = batch_gradient(theta, stack(single.shots), cfg.loss);
  sgd_step(manual.values(), g.grads, Scalar(0.02), Scalar(cfg.weight_decay));
  CHECK(stepped.params == manual);
  CHECK(theta == copy);

  Task empty = task;
  empty.shots.clear();
  CHECK_THROWS_AS(train_local(theta, empty, cfg, 0.01, 1), InsufficientDataError);
}

TEST_CASE("train_local reduces the task loss") {
  const auto& sources = small_sources();
  MetaConfig cfg = small_config();
  cfg.inner_epochs = 4;
  cfg.inner_batch = 1;
  cfg.inner_lr = 0.05;
  const ParamVector theta = build(cfg.arch, 6);
  std::vector<DatasetInfo> infos;
  for (const Dataset& d : sources) infos.push_back(d.info);
  Rng rng(8);
  const auto tasks = sample_meta_batch(sources, compute_sampling_weights(infos), 20, 5,
                                       TaskRule::VolumeBased, rng);
  int improved = 0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const double before = evaluate_loss(theta, tasks[i].shots, cfg.loss);
    const ParamVector local = train_local(theta, tasks[i], cfg, cfg.inner_lr, i).params;
    if (evaluate_loss(local, tasks[i].shots, cfg.loss) <= before) ++improved;
  }
  CHECK(improved >= 18);
}

TEST_CASE("divergence is reported with the task context") {
  const auto& sources = small_sources();
  MetaConfig cfg = small_config();
  const ParamVector theta = build(cfg.arch, 5);
  const Task task = sample_volume_based(sources[1], 0, 5);
  try {
    train_local(theta, task, cfg, 1e30, 1, "task 3");
    FAIL("expected divergence");
  } catch (const TrainingDivergedError& e) {
    CHECK(e.context() == "task 3");
  }
}

TEST_CASE("meta_train no-op and logging") {
  const auto& sources = small_sources();
  MetaConfig cfg = small_config();
  cfg.meta_epochs = 1;
  cfg.tasks_per_epoch = 1;
  cfg.inner_epochs = 0;
  const ParamVector init = build(cfg.arch, 2);
  CHECK(meta_train(sources, cfg, init).theta == init);

  cfg = small_config();
  const MetaResult r = meta_train(sources, cfg);
  REQUIRE(r.log.size() == cfg.meta_epochs);
  CHECK(r.tasks.size() == cfg.meta_epochs * cfg.tasks_per_epoch);
  for (const MetaLogRow& row : r.log) {
    CHECK(std::isfinite(row.mean_loss));
    CHECK(row.mean_sq_dist > 0);
    CHECK(row.weight_entropy == doctest::Approx(std::log(double(cfg.tasks_per_epoch))));
  }
  for (const TaskRecord& t : r.tasks) {
    for (std::uint32_t v : t.shot_volumes) CHECK(v == *t.volume_id);
  }
  std::ostringstream log, tasks;
  write_meta_log_csv(log, r.log);
  write_task_log_csv(tasks, r.tasks);
  CHECK(log.str().rfind("epoch,mean_loss,mean_sq_dist,weight_entropy,update_rule,task_rule\n", 0) == 0);
  const std::string log_text = log.str();
  CHECK(std::count(log_text.begin(), log_text.end(), '\n') == long(cfg.meta_epochs + 1));
  CHECK(tasks.str().rfind("epoch,task,dataset_id,task_rule,volume_id,shot_volumes,shot_slices\n", 0) == 0);

  cfg.task_rule = TaskRule::Standard;
  const MetaResult s = meta_train(sources, cfg);
  for (const TaskRecord& t : s.tasks) CHECK(!t.volume_id);
}

TEST_CASE("meta_train is reproducible and independent of the worker count") {
  const auto& sources = small_sources();
  MetaConfig cfg = small_config();
  const MetaResult a = meta_train(sources, cfg);
  const MetaResult b = meta_train(sources, cfg);
  CHECK(a.theta == b.theta);
  cfg.workers = 3;
  const MetaResult c = meta_train(sources, cfg);
  CHECK(a.theta == c.theta);
  cfg.seed = 12;
  cfg.workers = 1;
  CHECK(!(meta_train(sources, cfg).theta == a.theta));
}

TEST_CASE("paired AW and IDW runs separate only once distances differ") {
  const auto& sources = small_sources();
  MetaConfig cfg = small_config();
  cfg.meta_epochs = 2;
  MetaConfig idw = cfg;
  idw.update_rule = UpdateRule::IDW;
  const MetaResult a = meta_train(sources, cfg), b = meta_train(sources, idw);
  // Same tasks and same first-epoch local training.
  CHECK(a.log[0].mean_loss == b.log[0].mean_loss);
  CHECK(a.log[0].mean_sq_dist == b.log[0].mean_sq_dist);
  CHECK(b.log[0].weight_entropy < a.log[0].weight_entropy);
  CHECK(a.log[1].mean_loss != b.log[1].mean_loss);
  CHECK(!(a.theta == b.theta));

  // With one task per epoch both rules give the task weight 1.
  cfg.tasks_per_epoch = idw.tasks_per_epoch = 1;
  CHECK(meta_train(sources, cfg).theta == meta_train(sources, idw).theta);
}

TEST_CASE("config validation") {
  MetaConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.meta_epochs == 100);
  CHECK(cfg.tasks_per_epoch == 5);
  CHECK(cfg.shots == 15);
  CHECK(cfg.inner_lr == 0.01);
  CHECK(cfg.meta_lr == 0.01);
  CHECK(cfg.weight_decay == 0.003);
  for (auto mutate : std::vector<void (*)(MetaConfig&)>{
           [](MetaConfig& c) { c.meta_epochs = 0; }, [](MetaConfig& c) { c.shots = 0; },
           [](MetaConfig& c) { c.meta_lr = 0; }, [](MetaConfig& c) { c.lr_decay = 1.5; },
           [](MetaConfig& c) { c.lr_decay = 0; }}) {
    MetaConfig bad;
    mutate(bad);
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
  CHECK(cfg.inner_lr_at(3) == doctest::Approx(0.007));
  CHECK(parse_update_rule("idw") == UpdateRule::IDW);
  CHECK_THROWS_AS(parse_update_rule("mean"), ConfigError);
}

TEST_CASE("fine_tune") {
  const auto& sources = small_sources();
  const ParamVector init = build(ArchDescriptor{1, 4, 2, 1}, 3);
  const Task task = sample_volume_based(sources[2], 1, 5);
  TrainSchedule sched;
  sched.epochs = 0;
  CHECK(fine_tune(init, task.shots, sched, 1) == init);
  sched.epochs = 3;
  const ParamVector phi = fine_tune(init, task.shots, sched, 1);
  CHECK(!(phi == init));
  CHECK(fine_tune(init, task.shots, sched, 1) == phi);
  CHECK_THROWS_AS(fine_tune(init, {}, sched, 1), InsufficientDataError);
}
