#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace compose::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs the umbrella command. args[0] is the program name; a name of the form compose-<cmd> (as
/// installed by the per-module symlinks) behaves like "compose <cmd>". Machine-readable results go to
/// out, usage and errors to err, logs to stderr.
int run(std::vector<std::string> args, std::ostream& out, std::ostream& err);

}  // namespace compose::cli
