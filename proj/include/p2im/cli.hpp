#pragma once

#include <iosfwd>

namespace p2im {

/// Exit codes: 0 success, 1 usage or configuration error, 2 oracle
/// infrastructure failure, 130 interrupted.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitOracleFailure = 2;
inline constexpr int kExitInterrupted = 130;

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace p2im
