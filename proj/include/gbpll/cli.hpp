#pragma once

#include <iosfwd>
#include <span>
#include <string>

namespace gbpll::cli {

/// Exit codes of the command-line tool.
enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kDataError = 2,
  kNumericalAbort = 3,
};

/// Runs one subcommand (synth | train | eval | inspect-balls | report).
/// `args` excludes the program name.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace gbpll::cli
