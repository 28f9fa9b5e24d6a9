#pragma once

#include "mms/abi.hpp"

#include <filesystem>
#include <iosfwd>

#include "mms/segnet.hpp"

MMS_BEGIN_NAMESPACE

// MMSG checkpoint layout (little-endian):
//   "MMSG" | u32 version | u32 in, base, depth, out | u64 count | count x f32
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& os, const ParamVector& params);
ParamVector read_checkpoint(std::istream& is, const std::string& source = "<stream>");

void save_checkpoint(const std::filesystem::path& path, const ParamVector& params);
ParamVector load_checkpoint(const std::filesystem::path& path);

MMS_END_NAMESPACE
