#pragma once

#include <string>
#include <vector>

namespace stylesplat {

/// Exit codes of the command-line entry point.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,  // selftest failures and unexpected errors
  kExitUsage = 2,    // bad arguments, missing or unreadable files, bad config
  kExitInvalid = 3,  // validation or degenerate-input errors from a module
  kExitNumeric = 4,  // non-finite values
};

/// Runs one subcommand. `args` excludes the program name.
int dispatch(const std::vector<std::string>& args);

}  // namespace stylesplat
