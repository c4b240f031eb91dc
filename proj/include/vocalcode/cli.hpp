#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace vocalcode::cli {

// sysexits.h values.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 64;
inline constexpr int kExitData = 65;
inline constexpr int kExitIo = 74;

/// Runs one command line (args[0] is the program name). Output goes to `out`
/// unless a command writes a file; diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vocalcode::cli
