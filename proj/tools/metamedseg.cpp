#include <string>
#include <vector>

#include "mms/cli.hpp"

int main(int argc, char** argv) {
  return mms::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
