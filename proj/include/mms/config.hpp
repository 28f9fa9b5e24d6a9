#pragma once

#include "mms/abi.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mms/harness.hpp"

MMS_BEGIN_NAMESPACE

// Everything a command needs. Loaded from key=value text, overridden by
// command-line flags, and echoed back in full next to every output.
struct RunConfig {
  std::string data_dir;
  // Dataset id of the held-out target; empty = the manifest's target.
  std::string target;
  std::size_t resolution = 32;
  std::size_t heatmap_pairs = 100;
  ProtocolConfig protocol;

  std::uint64_t seed() const { return protocol.seed; }
  void validate() const;
};

// Sets one key. Throws ConfigError for unknown keys or unparsable values.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

// Every schema key in a stable order.
std::vector<std::string> config_keys();

// '#' starts a comment; blank lines are ignored; other lines are key = value.
void apply_config_text(RunConfig& cfg, std::istream& is, const std::string& source = "<config>");
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

// Fully resolved key=value listing; feeding it back reproduces `cfg` exactly.
void write_config(std::ostream& os, const RunConfig& cfg);

MMS_END_NAMESPACE
