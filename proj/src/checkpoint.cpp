#include "mms/checkpoint.hpp"

#include <fstream>

#include "mms/binio.hpp"
#include "mms/error.hpp"

MMS_BEGIN_NAMESPACE

void write_checkpoint(std::ostream& os, const ParamVector& params) {
  using binio::write_le;
  os.write("MMSG", 4);
  write_le<std::uint32_t>(os, kCheckpointVersion);
  const ArchDescriptor& a = params.arch();
  write_le<std::uint32_t>(os, a.input_channels);
  write_le<std::uint32_t>(os, a.base_width);
  write_le<std::uint32_t>(os, a.depth);
  write_le<std::uint32_t>(os, a.output_channels);
  write_le<std::uint64_t>(os, params.size());
  for (Scalar v : params.values()) write_le<float>(os, static_cast<float>(v));
}

ParamVector read_checkpoint(std::istream& is, const std::string& source) {
  using binio::read_le;
  binio::expect_magic(is, "MMSG", source);
  const auto version = read_le<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw DataError(source + ": unsupported checkpoint version " + std::to_string(version));
  }
  ArchDescriptor arch;
  arch.input_channels = read_le<std::uint32_t>(is, "arch");
  arch.base_width = read_le<std::uint32_t>(is, "arch");
  arch.depth = read_le<std::uint32_t>(is, "arch");
  arch.output_channels = read_le<std::uint32_t>(is, "arch");
  try {
    arch.validate();
  } catch (const ConfigError& e) {
    throw DataError(source + ": " + e.what());
  }
  const auto count = read_le<std::uint64_t>(is, "parameter count");
  if (count != arch.param_count()) {
    throw DataError(source + ": parameter count " + std::to_string(count) +
                    " does not match arch " + arch.to_string());
  }
  std::vector<Scalar> values(count);
  for (Scalar& v : values) v = static_cast<Scalar>(read_le<float>(is, "parameters"));
  return ParamVector(arch, std::move(values));
}

void save_checkpoint(const std::filesystem::path& path, const ParamVector& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  write_checkpoint(os, params);
  if (!os) throw DataError("write failed for " + path.string());
}

ParamVector load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  return read_checkpoint(is, path.string());
}

MMS_END_NAMESPACE
