#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rhrseg::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kUsage = 2;

// Environment variable naming the default parent of run directories.
inline constexpr const char* kRunRootEnv = "RHRSEG_RUN_ROOT";

// Parses `args` (without the program name) and dispatches to a
// subcommand: synth, train, eval, infer, ablate, config.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rhrseg::cli
