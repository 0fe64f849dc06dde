#pragma once

namespace notifdt::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;

// Entry point of the notifdt command-line tool. Returns the exit code.
int run(int argc, char** argv);

}  // namespace notifdt::cli
