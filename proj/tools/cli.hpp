#pragma once

#include <iosfwd>

namespace telescopic::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitPartial = 1;
inline constexpr int kExitUsage = 2;

inline constexpr const char* kArtifactVersion = "0.1.0";

// Parses argv and runs one subcommand; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace telescopic::cli
