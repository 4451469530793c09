#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace wdgda::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kIo = 3,
  kNumeric = 4,
  kInvariant = 5,
};

// Runs one command line (args[0] is the program name). Progress goes to
// `out`, errors to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace wdgda::cli
