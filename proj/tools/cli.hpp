#ifndef MLFPCA_TOOLS_CLI_HPP
#define MLFPCA_TOOLS_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace mlfpca::cli {

enum ExitCode : int {
  kSuccess = 0,
  kValidationFailure = 1,
  kNumericalFailure = 2,
};

/// Prefix of environment variables that override option defaults, e.g.
/// MLFPCA_THREADS=4 or MLFPCA_RANK_VARIABLE=2.
inline constexpr const char* kEnvPrefix = "MLFPCA_";

/// Runs the command line `args` (without the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mlfpca::cli

#endif  // MLFPCA_TOOLS_CLI_HPP
