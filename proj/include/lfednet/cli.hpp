#ifndef LFEDNET_CLI_HPP
#define LFEDNET_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace lfednet::cli {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kUsage = 1, kDataFailure = 2, kNumericalFailure = 3 };

/// Runs one subcommand. `args` excludes the program name. Progress goes to
/// `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lfednet::cli

#endif  // LFEDNET_CLI_HPP
