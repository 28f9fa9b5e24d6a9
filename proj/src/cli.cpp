#include "mms/cli.hpp"

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "mms/checkpoint.hpp"
#include "mms/config.hpp"
#include "mms/error.hpp"
#include "mms/volume_io.hpp"

namespace mms::cli {
namespace fs = std::filesystem;

namespace {

// Options shared by every data-consuming command.
struct CommonOptions {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::string> data;
  std::optional<std::string> target;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_file, "key=value config file");
  cmd->add_option("--set", o.sets, "Override a config key (key=value), repeatable");
  cmd->add_option("--data", o.data, "Benchmark directory written by `generate`");
  cmd->add_option("--target", o.target, "Held-out target dataset id");
  cmd->add_option("--seed", o.seed, "Root seed");
  cmd->add_option("--workers", o.workers, "Parallel task trainers");
}

// defaults <- config file <- --set <- named flags
RunConfig resolve(const CommonOptions& o, const std::vector<std::pair<std::string, std::string>>& flags) {
  RunConfig cfg;
  if (!o.config_file.empty()) apply_config_file(cfg, o.config_file);
  for (const std::string& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  if (o.data) set_config_value(cfg, "data", *o.data);
  if (o.target) set_config_value(cfg, "target", *o.target);
  if (o.seed) set_config_value(cfg, "seed", std::to_string(*o.seed));
  if (o.workers) set_config_value(cfg, "workers", std::to_string(*o.workers));
  for (const auto& [k, v] : flags) set_config_value(cfg, k, v);
  cfg.validate();
  return cfg;
}

void echo_config(const fs::path& path, const RunConfig& cfg) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  write_config(os, cfg);
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  return os;
}

struct LoadedData {
  std::vector<Dataset> all;
  std::vector<Dataset> sources;
  Dataset target;
};

LoadedData load_data(const RunConfig& cfg) {
  if (cfg.data_dir.empty()) throw ConfigError("no data directory given (--data or data=)");
  BenchmarkDir dir = read_benchmark_dir(cfg.data_dir);
  LoadedData out;
  out.all = prepare_benchmark(dir.bench, cfg.resolution);
  std::string target_id = cfg.target;
  if (target_id.empty()) {
    for (const Dataset& d : out.all) {
      if (d.info.organ == dir.target_organ) {
        target_id = d.info.id;
        break;
      }
    }
  }
  if (target_id.empty()) throw ConfigError("no target dataset given and none marked in the manifest");
  const Dataset* target = nullptr;
  for (const Dataset& d : out.all) {
    if (d.info.id == target_id) target = &d;
  }
  if (!target) throw ConfigError("target dataset '" + target_id + "' not found in " + cfg.data_dir);
  out.target = *target;
  // Every dataset of the target organ is held out, not only the target id.
  for (const Dataset& d : out.all) {
    if (d.info.organ != out.target.info.organ) out.sources.push_back(d);
  }
  if (out.sources.empty()) throw ConfigError("no source datasets left after holding out the target");
  return out;
}

int cmd_generate(const std::string& spec_path, const std::string& out_dir, std::uint64_t seed) {
  const BenchmarkSpec spec = spec_path.empty() || spec_path == "default"
                                 ? default_benchmark_spec()
                                 : load_benchmark_spec(spec_path);
  bool target_known = false;
  for (const OrganFamily& f : spec.families) target_known = target_known || f.name == spec.target;
  if (!target_known) throw ConfigError("benchmark target '" + spec.target + "' is not a family");
  const Benchmark bench = generate_benchmark(spec.families, derive_seed(seed, "data"));
  write_benchmark_dir(out_dir, bench, spec.target);
  save_benchmark_spec(fs::path(out_dir) / "spec.json", spec);
  std::ofstream cfg(fs::path(out_dir) / "generate_config.txt", std::ios::trunc);
  cfg << "seed = " << seed << '\n';
  spdlog::info("wrote {} volumes in {} datasets to {}", bench.volumes.size(), bench.datasets.size(),
               out_dir);
  return kOk;
}

int cmd_meta_train(const RunConfig& cfg, const std::string& ckpt, std::string log_path) {
  const LoadedData data = load_data(cfg);
  spdlog::info("meta-training on {} source datasets (target {}), {} rule, {} tasks, {} loss",
               data.sources.size(), data.target.info.id, to_string(cfg.protocol.meta.update_rule),
               to_string(cfg.protocol.meta.task_rule), to_string(cfg.protocol.meta.loss.kind));
  MetaConfig mc = cfg.protocol.meta;
  mc.seed = cfg.seed();
  const MetaResult result = meta_train(data.sources, mc);
  {
    std::ofstream os = open_out(ckpt);
    write_checkpoint(os, result.theta);
  }
  if (log_path.empty()) log_path = ckpt + ".log.csv";
  {
    std::ofstream os = open_out(log_path);
    write_meta_log_csv(os, result.log);
  }
  {
    std::ofstream os = open_out(ckpt + ".tasks.csv");
    write_task_log_csv(os, result.tasks);
  }
  echo_config(ckpt + ".config.txt", cfg);
  spdlog::info("checkpoint written to {}", ckpt);
  return kOk;
}

int cmd_finetune_eval(const RunConfig& cfg, const std::string& ckpt, const std::string& out,
                      std::string label) {
  const LoadedData data = load_data(cfg);
  const ProtocolConfig& pc = cfg.protocol;
  const TargetSplit split = split_target(data.target, pc.finetune_fraction, derive_seed(pc.seed, "split"));
  const ParamVector fresh = build(pc.meta.arch, derive_seed(pc.seed, "init"));
  ParamVector init;
  Method method;
  if (ckpt == "random") {
    init = fresh;
    method = Method::RandomInit;
  } else if (ckpt == "transfer") {
    init = train_transfer_baseline(data.sources, pc.transfer, fresh, derive_seed(pc.seed, "transfer"),
                                   data.target.info.organ)
               .params;
    method = Method::Transfer;
  } else {
    init = load_checkpoint(ckpt);
    if (!(init.arch() == pc.meta.arch)) {
      throw ConfigError("checkpoint " + ckpt + " has arch " + init.arch().to_string() +
                        ", incompatible with configured arch " + pc.meta.arch.to_string());
    }
    method = pc.meta.update_rule == UpdateRule::AW ? Method::MetaAW : Method::MetaIDW;
  }
  if (!label.empty()) method = parse_method(label);
  const ExperimentResult r = finetune_and_evaluate(init, data.target, split, pc, method);
  {
    std::ofstream os = open_out(out);
    write_results_csv(os, std::span(&r, 1));
  }
  echo_config(out + ".config.txt", cfg);
  spdlog::info("{}: mean IoU {:.2f} (std {:.2f}) over {} selections", to_string(method), r.mean,
               r.stddev, r.iou.size());
  return kOk;
}

int cmd_compare(const RunConfig& cfg, const std::vector<std::string>& method_names,
                const std::string& out) {
  const LoadedData data = load_data(cfg);
  std::vector<Method> methods;
  for (const std::string& m : method_names) methods.push_back(parse_method(m));
  const std::vector<ExperimentResult> results = run_protocol(data.sources, data.target, methods, cfg.protocol);
  {
    std::ofstream os = open_out(out);
    write_results_csv(os, results);
  }
  echo_config(out + ".config.txt", cfg);
  for (const ExperimentResult& r : results) {
    std::cout << to_string(r.method) << ": " << r.mean << " +- " << r.stddev << '\n';
  }
  return kOk;
}

int cmd_ablation(const RunConfig& cfg, const std::string& out) {
  const LoadedData data = load_data(cfg);
  const std::vector<LossKind> losses = {LossKind::SoftIoU, LossKind::TverskyFocal, LossKind::Dice,
                                        LossKind::WeightedBCE, LossKind::BCEPlusLogDice};
  const std::vector<ExperimentResult> results = run_ablation(data.sources, data.target, cfg.protocol, losses);
  {
    std::ofstream os = open_out(out);
    write_ablation_csv(os, results);
  }
  echo_config(out + ".config.txt", cfg);
  return kOk;
}

int cmd_heatmap(const RunConfig& cfg, const std::string& prefix) {
  if (cfg.data_dir.empty()) throw ConfigError("no data directory given (--data or data=)");
  const BenchmarkDir dir = read_benchmark_dir(cfg.data_dir);
  const std::vector<Dataset> all = prepare_benchmark(dir.bench, cfg.resolution);
  const DistanceMatrix m = distance_heatmap(all, cfg.heatmap_pairs, derive_seed(cfg.seed(), "heatmap"));
  {
    std::ofstream os = open_out(prefix + ".csv");
    write_heatmap_csv(os, m);
  }
  {
    std::ofstream os = open_out(prefix + ".pgm");
    write_heatmap_pgm(os, m);
  }
  echo_config(prefix + ".config.txt", cfg);
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Few-shot segmentation meta-learning toolkit"};
  app.require_subcommand(1);
  bool verbose = false, quiet = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");
  app.add_flag("-q,--quiet", quiet, "Warnings and errors only");

  std::string spec_path, gen_out;
  std::uint64_t gen_seed = 0;
  CLI::App* gen = app.add_subcommand("generate", "Write a synthetic volumetric benchmark");
  gen->add_option("--spec", spec_path, "Benchmark spec JSON (default: built-in)");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Root seed");

  CommonOptions mt_opts;
  std::string mt_rule, mt_tasks, mt_loss, mt_out, mt_log;
  std::optional<std::size_t> mt_epochs;
  CLI::App* mt = app.add_subcommand("meta-train", "Meta-train an initialisation on the source datasets");
  add_common(mt, mt_opts);
  mt->add_option("--rule", mt_rule, "Update rule: aw|idw");
  mt->add_option("--tasks", mt_tasks, "Task rule: standard|volume");
  mt->add_option("--loss", mt_loss, "bce|iou|bce_iou|dice|tversky_focal");
  mt->add_option("--epochs", mt_epochs, "Meta-epochs");
  mt->add_option("--out", mt_out, "Checkpoint path")->required();
  mt->add_option("--log", mt_log, "Training log CSV (default <out>.log.csv)");

  CommonOptions fe_opts;
  std::string fe_ckpt, fe_shots, fe_out, fe_label;
  std::optional<std::size_t> fe_seeds;
  CLI::App* fe = app.add_subcommand("finetune-eval", "Fine-tune on target shots and report test IoU");
  add_common(fe, fe_opts);
  fe->add_option("--ckpt", fe_ckpt, "Checkpoint file, 'random' or 'transfer'")->required();
  fe->add_option("--shots", fe_shots, "Shots per selection or 'all'");
  fe->add_option("--seeds", fe_seeds, "Number of random selections");
  fe->add_option("--method", fe_label, "Method tag written to the CSV");
  fe->add_option("--out", fe_out, "Results CSV")->required();

  CommonOptions cmp_opts;
  std::vector<std::string> cmp_methods = {"random-init", "transfer", "meta-aw", "meta-idw"};
  std::string cmp_out;
  CLI::App* cmp = app.add_subcommand("compare", "Run the evaluation protocol for several methods");
  add_common(cmp, cmp_opts);
  cmp->add_option("--methods", cmp_methods, "random-init transfer meta-aw meta-idw");
  cmp->add_option("--out", cmp_out, "Results CSV")->required();

  CommonOptions ab_opts;
  std::string ab_out;
  CLI::App* ab = app.add_subcommand("ablation", "Update rule x task rule x loss grid");
  add_common(ab, ab_opts);
  ab->add_option("--out", ab_out, "Results CSV")->required();

  CommonOptions hm_opts;
  std::optional<std::size_t> hm_pairs;
  std::string hm_out;
  CLI::App* hm = app.add_subcommand("heatmap", "Inter-dataset image distance matrix");
  add_common(hm, hm_opts);
  hm->add_option("--pairs", hm_pairs, "Random slice pairs per cell");
  hm->add_option("--out", hm_out, "Output prefix (.csv, .pgm)")->required();

  std::vector<std::string> argv_store = args;
  std::reverse(argv_store.begin(), argv_store.end());
  try {
    app.parse(argv_store);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*gen) return cmd_generate(spec_path, gen_out, gen_seed);
    if (*mt) {
      std::vector<std::pair<std::string, std::string>> flags;
      if (!mt_rule.empty()) flags.emplace_back("update_rule", mt_rule);
      if (!mt_tasks.empty()) flags.emplace_back("task_rule", mt_tasks);
      if (!mt_loss.empty()) flags.emplace_back("loss", mt_loss);
      if (mt_epochs) flags.emplace_back("meta_epochs", std::to_string(*mt_epochs));
      return cmd_meta_train(resolve(mt_opts, flags), mt_out, mt_log);
    }
    if (*fe) {
      std::vector<std::pair<std::string, std::string>> flags;
      if (!fe_shots.empty()) flags.emplace_back("ft_shots", fe_shots);
      if (fe_seeds) flags.emplace_back("ft_selections", std::to_string(*fe_seeds));
      return cmd_finetune_eval(resolve(fe_opts, flags), fe_ckpt, fe_out, fe_label);
    }
    if (*cmp) return cmd_compare(resolve(cmp_opts, {}), cmp_methods, cmp_out);
    if (*ab) return cmd_ablation(resolve(ab_opts, {}), ab_out);
    if (*hm) {
      std::vector<std::pair<std::string, std::string>> flags;
      if (hm_pairs) flags.emplace_back("heatmap_pairs", std::to_string(*hm_pairs));
      return cmd_heatmap(resolve(hm_opts, flags), hm_out);
    }
  } catch (const ConfigError& e) {
    spdlog::error("configuration error: {}", e.what());
    return kConfigError;
  } catch (const TrainingDivergedError& e) {
    spdlog::error("{}", e.what());
    return kDiverged;
  } catch (const NumericError& e) {
    spdlog::error("numeric error: {}", e.what());
    return kDiverged;
  } catch (const DataError& e) {
    spdlog::error("data error: {}", e.what());
    return kDataError;
  } catch (const ProtocolError& e) {
    spdlog::error("protocol error: {}", e.what());
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    spdlog::error("filesystem error: {}", e.what());
    return kDataError;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFailure;
  }
  return kFailure;
}

}  // namespace mms::cli
