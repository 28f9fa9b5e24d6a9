#include "mms/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>

#include "mms/error.hpp"

MMS_BEGIN_NAMESPACE
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define MMS_SIZE_FIELD(name, expr)                                                              \
  Field {                                                                                      \
    name, [](RunConfig& c, const std::string& k, const std::string& v) {                     \
      expr = static_cast<std::size_t>(parse_u64(k, v));                                        \
    },                                                                                         \
        [](const RunConfig& c) { return std::to_string(expr); }                                \
  }
#define MMS_U32_FIELD(name, expr)                                                               \
  Field {                                                                                      \
    name, [](RunConfig& c, const std::string& k, const std::string& v) {                     \
      expr = static_cast<std::uint32_t>(parse_u64(k, v));                                      \
    },                                                                                         \
        [](const RunConfig& c) { return std::to_string(expr); }                                \
  }
#define MMS_DOUBLE_FIELD(name, expr)                                                            \
  Field {                                                                                      \
    name, [](RunConfig& c, const std::string& k, const std::string& v) {                     \
      expr = parse_double(k, v);                                                               \
    },                                                                                         \
        [](const RunConfig& c) { return fmt(static_cast<double>(expr)); }                      \
  }
#define MMS_SCALAR_FIELD(name, expr)                                                            \
  Field {                                                                                      \
    name, [](RunConfig& c, const std::string& k, const std::string& v) {                     \
      expr = static_cast<Scalar>(parse_double(k, v));                                          \
    },                                                                                         \
        [](const RunConfig& c) { return fmt(static_cast<double>(expr)); }                      \
  }

const std::vector<Field>& schema() {
  static const std::vector<Field> fields = {
      {"data", [](RunConfig& c, const std::string&, const std::string& v) { c.data_dir = v; },
       [](const RunConfig& c) { return c.data_dir; }},
      {"target", [](RunConfig& c, const std::string&, const std::string& v) { c.target = v; },
       [](const RunConfig& c) { return c.target; }},
      {"seed",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.protocol.seed = parse_u64(k, v);
         c.protocol.meta.seed = c.protocol.seed;
       },
       [](const RunConfig& c) { return std::to_string(c.protocol.seed); }},
      MMS_SIZE_FIELD("workers", c.protocol.meta.workers),
      MMS_SIZE_FIELD("resolution", c.resolution),
      MMS_U32_FIELD("base_width", c.protocol.meta.arch.base_width),
      MMS_U32_FIELD("depth", c.protocol.meta.arch.depth),
      MMS_SIZE_FIELD("meta_epochs", c.protocol.meta.meta_epochs),
      MMS_SIZE_FIELD("tasks_per_epoch", c.protocol.meta.tasks_per_epoch),
      MMS_SIZE_FIELD("shots", c.protocol.meta.shots),
      MMS_DOUBLE_FIELD("inner_lr", c.protocol.meta.inner_lr),
      MMS_DOUBLE_FIELD("meta_lr", c.protocol.meta.meta_lr),
      MMS_SIZE_FIELD("inner_epochs", c.protocol.meta.inner_epochs),
      MMS_SIZE_FIELD("inner_batch", c.protocol.meta.inner_batch),
      MMS_DOUBLE_FIELD("weight_decay", c.protocol.meta.weight_decay),
      MMS_DOUBLE_FIELD("lr_decay", c.protocol.meta.lr_decay),
      MMS_SIZE_FIELD("decay_period", c.protocol.meta.decay_period),
      {"update_rule",
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.protocol.meta.update_rule = parse_update_rule(v);
       },
       [](const RunConfig& c) { return to_string(c.protocol.meta.update_rule); }},
      {"task_rule",
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.protocol.meta.task_rule = parse_task_rule(v);
       },
       [](const RunConfig& c) { return to_string(c.protocol.meta.task_rule); }},
      {"loss",
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.protocol.meta.loss.kind = parse_loss_kind(v);
       },
       [](const RunConfig& c) { return to_string(c.protocol.meta.loss.kind); }},
      MMS_SCALAR_FIELD("loss_eps", c.protocol.meta.loss.eps),
      MMS_SCALAR_FIELD("tversky_alpha", c.protocol.meta.loss.tversky_alpha),
      MMS_SCALAR_FIELD("tversky_beta", c.protocol.meta.loss.tversky_beta),
      MMS_SCALAR_FIELD("tversky_gamma", c.protocol.meta.loss.tversky_gamma),
      {"invert_pos_weight",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.protocol.meta.loss.invert_pos_weight = parse_bool(k, v);
       },
       [](const RunConfig& c) {
         return std::string(c.protocol.meta.loss.invert_pos_weight ? "true" : "false");
       }},
      MMS_SIZE_FIELD("ft_epochs", c.protocol.finetune.epochs),
      MMS_DOUBLE_FIELD("ft_lr", c.protocol.finetune.lr),
      MMS_DOUBLE_FIELD("ft_weight_decay", c.protocol.finetune.weight_decay),
      MMS_DOUBLE_FIELD("ft_lr_decay", c.protocol.finetune.lr_decay),
      MMS_SIZE_FIELD("ft_decay_period", c.protocol.finetune.decay_period),
      MMS_SIZE_FIELD("ft_batch", c.protocol.finetune.batch_size),
      {"ft_loss",
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.protocol.finetune.loss.kind = parse_loss_kind(v);
       },
       [](const RunConfig& c) { return to_string(c.protocol.finetune.loss.kind); }},
      {"ft_shots",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.protocol.shots = v == "all" ? 0 : static_cast<std::size_t>(parse_u64(k, v));
       },
       [](const RunConfig& c) {
         return c.protocol.shots == 0 ? std::string("all") : std::to_string(c.protocol.shots);
       }},
      MMS_SIZE_FIELD("ft_selections", c.protocol.selections),
      MMS_DOUBLE_FIELD("ft_split", c.protocol.finetune_fraction),
      MMS_SIZE_FIELD("transfer_epochs", c.protocol.transfer.epochs),
      MMS_DOUBLE_FIELD("transfer_lr", c.protocol.transfer.lr),
      MMS_DOUBLE_FIELD("transfer_weight_decay", c.protocol.transfer.weight_decay),
      MMS_SIZE_FIELD("transfer_batch", c.protocol.transfer.batch_size),
      {"transfer_loss",
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.protocol.transfer.loss.kind = parse_loss_kind(v);
       },
       [](const RunConfig& c) { return to_string(c.protocol.transfer.loss.kind); }},
      MMS_SIZE_FIELD("heatmap_pairs", c.heatmap_pairs),
  };
  return fields;
}

}  // namespace

void RunConfig::validate() const {
  if (resolution < 1) throw ConfigError("resolution must be >= 1");
  const std::size_t divisor = std::size_t{1} << protocol.meta.arch.depth;
  if (resolution % divisor != 0) {
    throw ConfigError("resolution " + std::to_string(resolution) + " is not divisible by 2^depth = " +
                      std::to_string(divisor));
  }
  if (heatmap_pairs < 1) throw ConfigError("heatmap_pairs must be >= 1");
  protocol.validate();
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const Field& f : schema()) {
    if (key == f.key) {
      f.set(cfg, key, value);
      // The loss tuning parameters are shared by every training stage.
      const LossParams& shared = cfg.protocol.meta.loss;
      for (LossParams* p : {&cfg.protocol.finetune.loss, &cfg.protocol.transfer.loss}) {
        const LossKind kind = p->kind;
        *p = shared;
        p->kind = kind;
      }
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : schema()) keys.emplace_back(f.key);
  return keys;
}

void apply_config_text(RunConfig& cfg, std::istream& is, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected key = value");
    }
    try {
      set_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  apply_config_text(cfg, is, path.string());
}

void write_config(std::ostream& os, const RunConfig& cfg) {
  for (const Field& f : schema()) os << f.key << " = " << f.get(cfg) << '\n';
}

MMS_END_NAMESPACE
