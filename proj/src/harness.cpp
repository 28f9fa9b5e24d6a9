#include "mms/harness.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <set>

#include "mms/error.hpp"
#include "mms/rng.hpp"

MMS_BEGIN_NAMESPACE

std::string to_string(Method m) {
  switch (m) {
    case Method::RandomInit: return "random-init";
    case Method::Transfer: return "transfer";
    case Method::MetaAW: return "meta-aw";
    case Method::MetaIDW: return "meta-idw";
  }
  return "?";
}

Method parse_method(const std::string& text) {
  for (Method m : {Method::RandomInit, Method::Transfer, Method::MetaAW, Method::MetaIDW}) {
    if (text == to_string(m)) return m;
  }
  throw ConfigError("unknown method '" + text + "'");
}

void ProtocolConfig::validate() const {
  if (selections < 1) throw ConfigError("protocol needs at least one selection");
  if (!(finetune_fraction > 0.0 && finetune_fraction < 1.0)) {
    throw ConfigError("finetune fraction must be in (0, 1)");
  }
  finetune.validate();
  transfer.validate();
  meta.validate();
}

TargetSplit split_target(const Dataset& target, double finetune_fraction, std::uint64_t seed) {
  const std::size_t n = target.volumes.size();
  auto count = static_cast<std::size_t>(std::llround(finetune_fraction * static_cast<double>(n)));
  count = std::clamp<std::size_t>(count, 1, n > 0 ? n - 1 : 0);
  if (n < 2 || count == 0) {
    throw ProtocolError("target dataset " + target.info.id + " needs at least two volumes to split");
  }
  Rng rng(seed);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  TargetSplit split;
  split.finetune_volumes.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
  split.test_volumes.assign(order.begin() + static_cast<std::ptrdiff_t>(count), order.end());
  std::sort(split.finetune_volumes.begin(), split.finetune_volumes.end());
  std::sort(split.test_volumes.begin(), split.test_volumes.end());
  assert_disjoint(target, split);
  return split;
}

void assert_disjoint(const Dataset& target, const TargetSplit& split) {
  std::set<std::uint32_t> ft;
  for (std::size_t v : split.finetune_volumes) ft.insert(target.volumes.at(v).volume_id);
  for (std::size_t v : split.test_volumes) {
    if (ft.count(target.volumes.at(v).volume_id)) {
      throw ProtocolError("volume " + std::to_string(target.volumes[v].volume_id) +
                          " is in both the fine-tune and the test pool");
    }
  }
}

std::vector<SliceSample> pool_slices(const Dataset& dataset, std::span<const std::size_t> volumes) {
  std::vector<SliceSample> out;
  for (std::size_t v : volumes) {
    for (std::size_t s : dataset.eligible.at(v)) out.push_back(dataset.slice(v, s));
  }
  return out;
}

double evaluate_iou(const ParamVector& params, const std::vector<SliceSample>& samples,
                    std::size_t batch_size) {
  if (samples.empty()) throw InsufficientDataError("no samples to evaluate");
  double total = 0.0;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    const std::vector<SliceSample> chunk(samples.begin() + static_cast<std::ptrdiff_t>(start),
                                         samples.begin() + static_cast<std::ptrdiff_t>(end));
    const Batch b = stack(chunk);
    total += eval_iou(predict(params, b.images), b.masks) * static_cast<double>(end - start);
  }
  return total / static_cast<double>(samples.size());
}

void summarize(ExperimentResult& r) {
  if (r.iou.empty()) {
    r.mean = r.stddev = 0.0;
    return;
  }
  double sum = 0.0;
  for (double v : r.iou) sum += v;
  r.mean = sum / static_cast<double>(r.iou.size());
  double ss = 0.0;
  for (double v : r.iou) ss += (v - r.mean) * (v - r.mean);
  r.stddev = std::sqrt(ss / static_cast<double>(r.iou.size()));
}

TrainResult train_transfer_baseline(const std::vector<Dataset>& sources,
                                    const TrainSchedule& schedule, const ParamVector& init,
                                    std::uint64_t seed, const std::string& target_organ) {
  if (sources.empty()) throw ConfigError("transfer baseline needs source datasets");
  std::vector<SliceSample> pooled;
  for (const Dataset& d : sources) {
    if (!target_organ.empty() && d.info.organ == target_organ) {
      throw ProtocolError("transfer pool contains target organ dataset " + d.info.id);
    }
    std::vector<std::size_t> all(d.volumes.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    std::vector<SliceSample> s = pool_slices(d, all);
    pooled.insert(pooled.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
  }
  if (schedule.epochs == 0) return {init, {}};
  return train_supervised(init, pooled, schedule, seed, "transfer");
}

ExperimentResult finetune_and_evaluate(const ParamVector& init, const Dataset& target,
                                       const TargetSplit& split, const ProtocolConfig& cfg,
                                       Method method) {
  assert_disjoint(target, split);
  const std::vector<SliceSample> pool = pool_slices(target, split.finetune_volumes);
  const std::vector<SliceSample> test = pool_slices(target, split.test_volumes);
  std::set<std::uint32_t> test_ids;
  for (std::size_t v : split.test_volumes) test_ids.insert(target.volumes[v].volume_id);

  ExperimentResult r;
  r.method = method;
  r.task_rule = cfg.meta.task_rule;
  r.meta_loss = cfg.meta.loss.kind;
  for (std::size_t s = 0; s < cfg.selections; ++s) {
    const std::uint64_t sel_seed = derive_seed(derive_seed(cfg.seed, "protocol"), s);
    Rng rng(sel_seed);
    const std::size_t k = cfg.shots == 0 ? pool.size() : cfg.shots;
    std::vector<SliceSample> shots;
    for (std::size_t i : choose_without_replacement(pool.size(), k, rng)) {
      if (test_ids.count(pool[i].volume_id)) {
        throw ProtocolError("fine-tune shot drawn from test volume " + std::to_string(pool[i].volume_id));
      }
      shots.push_back(pool[i]);
    }
    const ParamVector phi = fine_tune(init, shots, cfg.finetune, derive_seed(sel_seed, "finetune"));
    r.seeds.push_back(s);
    r.iou.push_back(evaluate_iou(phi, test));
    spdlog::debug("{} selection {}: IoU {:.2f}", to_string(method), s, r.iou.back());
  }
  summarize(r);
  return r;
}

namespace {

ParamVector init_for(Method method, const std::vector<Dataset>& sources, const Dataset& target,
                     const ProtocolConfig& cfg) {
  const ParamVector fresh = build(cfg.meta.arch, derive_seed(cfg.seed, "init"));
  switch (method) {
    case Method::RandomInit: return fresh;
    case Method::Transfer:
      return train_transfer_baseline(sources, cfg.transfer, fresh, derive_seed(cfg.seed, "transfer"),
                                     target.info.organ)
          .params;
    case Method::MetaAW:
    case Method::MetaIDW: {
      MetaConfig mc = cfg.meta;
      mc.seed = cfg.seed;
      mc.update_rule = method == Method::MetaAW ? UpdateRule::AW : UpdateRule::IDW;
      return meta_train(sources, mc, fresh).theta;
    }
  }
  throw ConfigError("unhandled method");
}

void check_sources(const std::vector<Dataset>& sources, const Dataset& target) {
  for (const Dataset& d : sources) {
    if (d.info.organ == target.info.organ) {
      throw ProtocolError("source dataset " + d.info.id + " shares the target organ " +
                          target.info.organ);
    }
  }
}

}  // namespace

std::vector<ExperimentResult> run_protocol(const std::vector<Dataset>& sources,
                                           const Dataset& target, std::span<const Method> methods,
                                           const ProtocolConfig& cfg) {
  cfg.validate();
  check_sources(sources, target);
  const TargetSplit split = split_target(target, cfg.finetune_fraction, derive_seed(cfg.seed, "split"));
  std::vector<ExperimentResult> results;
  for (Method m : methods) {
    spdlog::info("protocol: preparing {} initialisation", to_string(m));
    results.push_back(finetune_and_evaluate(init_for(m, sources, target, cfg), target, split, cfg, m));
    spdlog::info("protocol: {} mean IoU {:.2f} (std {:.2f})", to_string(m), results.back().mean,
                 results.back().stddev);
  }
  return results;
}

std::vector<ExperimentResult> run_ablation(const std::vector<Dataset>& sources,
                                           const Dataset& target, const ProtocolConfig& cfg,
                                           std::span<const LossKind> losses) {
  cfg.validate();
  check_sources(sources, target);
  const TargetSplit split = split_target(target, cfg.finetune_fraction, derive_seed(cfg.seed, "split"));
  std::vector<ExperimentResult> results;
  for (UpdateRule rule : {UpdateRule::AW, UpdateRule::IDW}) {
    for (TaskRule task_rule : {TaskRule::Standard, TaskRule::VolumeBased}) {
      for (LossKind loss : losses) {
        ProtocolConfig c = cfg;
        c.meta.task_rule = task_rule;
        c.meta.loss.kind = loss;
        const Method m = rule == UpdateRule::AW ? Method::MetaAW : Method::MetaIDW;
        results.push_back(finetune_and_evaluate(init_for(m, sources, target, c), target, split, c, m));
        spdlog::info("ablation: {} {} {} -> {:.2f}", to_string(rule), to_string(task_rule),
                     to_string(loss), results.back().mean);
      }
    }
  }
  return results;
}

namespace {

std::string update_rule_tag(Method m) {
  if (m == Method::MetaAW) return "aw";
  if (m == Method::MetaIDW) return "idw";
  return "none";
}

std::string task_rule_tag(const ExperimentResult& r) {
  return (r.method == Method::MetaAW || r.method == Method::MetaIDW) ? to_string(r.task_rule) : "none";
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

void write_results_csv(std::ostream& os, std::span<const ExperimentResult> results) {
  os << "method,task_rule,update_rule,seed,iou\n";
  for (const ExperimentResult& r : results) {
    for (std::size_t i = 0; i < r.iou.size(); ++i) {
      os << to_string(r.method) << ',' << task_rule_tag(r) << ',' << update_rule_tag(r.method) << ','
         << r.seeds[i] << ',' << fmt_double(r.iou[i]) << '\n';
    }
  }
}

void write_ablation_csv(std::ostream& os, std::span<const ExperimentResult> results) {
  os << "method,task_rule,update_rule,meta_loss,seed,iou\n";
  for (const ExperimentResult& r : results) {
    for (std::size_t i = 0; i < r.iou.size(); ++i) {
      os << to_string(r.method) << ',' << task_rule_tag(r) << ',' << update_rule_tag(r.method) << ','
         << to_string(r.meta_loss) << ',' << r.seeds[i] << ',' << fmt_double(r.iou[i]) << '\n';
    }
  }
}

double slice_distance(const SliceSample& a, const SliceSample& b) {
  if (a.image.shape() != b.image.shape()) {
    throw DimensionError("slice distance: " + shape_str(a.image.shape()) + " vs " +
                         shape_str(b.image.shape()));
  }
  double ss = 0.0;
  for (std::size_t i = 0; i < a.image.size(); ++i) {
    const double d = static_cast<double>(a.image[i]) - static_cast<double>(b.image[i]);
    ss += d * d;
  }
  return std::sqrt(ss);
}

namespace {

// Volumes of a dataset that have at least one eligible slice.
std::vector<std::size_t> usable_volumes(const Dataset& d) {
  std::vector<std::size_t> out;
  for (std::size_t v = 0; v < d.volumes.size(); ++v) {
    if (!d.eligible[v].empty()) out.push_back(v);
  }
  if (out.empty()) throw InsufficientDataError("dataset " + d.info.id + " has no eligible slices");
  return out;
}

SliceSample random_slice(const Dataset& d, const std::vector<std::size_t>& volumes, Rng& rng,
                         std::size_t* chosen_volume = nullptr) {
  const std::size_t v = volumes[rng.index(volumes.size())];
  if (chosen_volume) *chosen_volume = v;
  const std::vector<std::size_t>& e = d.eligible[v];
  return d.slice(v, e[rng.index(e.size())]);
}

}  // namespace

DistanceMatrix distance_heatmap(const std::vector<Dataset>& datasets, std::size_t pairs_per_cell,
                                std::uint64_t seed) {
  if (datasets.size() < 2) throw ConfigError("heatmap needs at least two datasets");
  if (pairs_per_cell < 1) throw ConfigError("heatmap needs at least one pair per cell");
  const std::size_t n = datasets.size();
  std::vector<std::vector<std::size_t>> usable;
  for (const Dataset& d : datasets) usable.push_back(usable_volumes(d));

  DistanceMatrix m;
  for (const Dataset& d : datasets) m.dataset_ids.push_back(d.info.id);
  m.distances.assign(n * n, 0.0);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      double total = 0.0;
      for (auto [first, second] : {std::pair{a, b}, std::pair{b, a}}) {
        Rng rng(derive_seed(seed, first, second));
        for (std::size_t p = 0; p < pairs_per_cell; ++p) {
          const SliceSample x = random_slice(datasets[first], usable[first], rng);
          const SliceSample y = random_slice(datasets[second], usable[second], rng);
          total += slice_distance(x, y);
        }
      }
      const double mean = total / static_cast<double>(2 * pairs_per_cell);
      m.distances[a * n + b] = mean;
      m.distances[b * n + a] = mean;
    }
  }
  return m;
}

std::vector<double> within_dataset_distances(const std::vector<Dataset>& datasets,
                                             std::size_t pairs, std::uint64_t seed) {
  std::vector<double> out;
  for (std::size_t a = 0; a < datasets.size(); ++a) {
    const std::vector<std::size_t> usable = usable_volumes(datasets[a]);
    Rng rng(derive_seed(seed, a, a));
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t p = 0; p < pairs; ++p) {
      std::size_t va = 0, vb = 0;
      const SliceSample x = random_slice(datasets[a], usable, rng, &va);
      SliceSample y = random_slice(datasets[a], usable, rng, &vb);
      // Different volumes where possible.
      for (int retry = 0; retry < 16 && vb == va && usable.size() > 1; ++retry) {
        y = random_slice(datasets[a], usable, rng, &vb);
      }
      total += slice_distance(x, y);
      ++count;
    }
    out.push_back(count ? total / static_cast<double>(count) : 0.0);
  }
  return out;
}

void write_heatmap_csv(std::ostream& os, const DistanceMatrix& m) {
  os << "dataset";
  for (const std::string& id : m.dataset_ids) os << ',' << id;
  os << '\n';
  char buf[64];
  for (std::size_t a = 0; a < m.size(); ++a) {
    os << m.dataset_ids[a];
    for (std::size_t b = 0; b < m.size(); ++b) {
      std::snprintf(buf, sizeof(buf), "%.17g", m.at(a, b));
      os << ',' << buf;
    }
    os << '\n';
  }
}

void write_heatmap_pgm(std::ostream& os, const DistanceMatrix& m) {
  const std::size_t n = m.size();
  const auto [lo, hi] = std::minmax_element(m.distances.begin(), m.distances.end());
  const double range = *hi - *lo;
  os << "P5\n" << n << ' ' << n << "\n255\n";
  for (double d : m.distances) {
    const double scaled = range > 0.0 ? (d - *lo) / range : 0.0;
    os.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * scaled))));
  }
}

MMS_END_NAMESPACE
