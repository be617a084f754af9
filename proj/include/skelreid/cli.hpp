#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace skelreid::cli {

/// Exit codes: 0 success, 1 internal error, 2 usage error, missing input
/// file or invalid configuration/input.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;

/// Runs one subcommand (synth, train, embed, match, eval, ablate).
/// `args` excludes the program name. Results go to files named by flags,
/// reports to `out`, logs and errors to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, char** argv);

}  // namespace skelreid::cli
