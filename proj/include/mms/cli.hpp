#pragma once

#include <string>
#include <vector>

namespace mms::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kDataError = 3,
  kDiverged = 4,
};

// Entry point of the `metamedseg` tool. `args` excludes the program name.
int run(const std::vector<std::string>& args);

}  // namespace mms::cli
