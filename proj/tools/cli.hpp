#pragma once

#include <iosfwd>

namespace batmil::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Entry point shared by the executable and the in-process CLI tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace batmil::cli
