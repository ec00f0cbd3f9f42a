#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace vitloss::cli {

enum ExitCode : int {
  kOk = 0,
  kGradcheckFailed = 1,
  kIoFailure = 2,
  kContractViolation = 3,
  kDiverged = 4,
};

inline constexpr const char* kToolVersion = "0.1.0";

/// Runs one command line (without the program name). Normal output goes to
/// `out`, diagnostics to `err`; the return value is the process exit code.
int run(std::vector<std::string> args, std::ostream& out, std::ostream& err);

}  // namespace vitloss::cli
