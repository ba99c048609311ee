#pragma once

#include <iosfwd>

namespace toa::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,  // probe failure or I/O error
  kUsage = 2,
  kDivergence = 3,
  kCorruptInput = 4,
};

// Entry point of the `toa` tool: generate | train | theory | inspect.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace toa::cli
