#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace falsify::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

/// Entry point behind the `falsify` binary. args excludes the program name.
/// Machine-readable JSON lines go to out; logs go to stderr.
int run(const std::vector<std::string>& args, std::ostream& out);

}  // namespace falsify::cli
