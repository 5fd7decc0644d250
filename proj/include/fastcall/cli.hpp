#pragma once

#include <iosfwd>

namespace fastcall::cli {

// Exit codes of the simulator front end.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRejected = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitInvariant = 3;

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fastcall::cli
