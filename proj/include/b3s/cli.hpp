#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace b3s::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Runs one b3sum command line. Results go to `out` (or files named by the
/// command), log lines to `err`; B3SUM_LOG sets the level.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace b3s::cli
