#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace driftvq {

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // a check failed or a run could not finish
inline constexpr int kExitUsage = 2;

// Environment variable naming the default output directory.
inline constexpr const char* kOutDirEnv = "DRIFTVQ_OUT";

// Entry point behind the `driftvq` binary. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace driftvq
