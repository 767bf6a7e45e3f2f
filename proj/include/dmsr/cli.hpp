#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dmsr::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kDataError = 3,
  kDivergence = 4,
};

/// Entry point shared by the executable and the tests. `args` excludes the
/// program name. Errors go to `err` as one `error: <kind>: <message>` line.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dmsr::cli
