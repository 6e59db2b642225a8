#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bamnet {

/// Process exit statuses of the command-line tool.
enum ExitStatus : int {
    kExitOk = 0,
    kExitUsage = 1,
    kExitData = 2,
    kExitCheckFailed = 3,
};

/// Environment variable naming the default results directory.
inline constexpr const char* kResultsEnv = "BAMNET_RESULTS";

/// Runs one subcommand (prep, train, eval, report, gradcheck). `args`
/// excludes the program name.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace bamnet
