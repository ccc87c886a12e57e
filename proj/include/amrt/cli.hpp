#pragma once

// `amrt` command line: pkg-build, serve, bench, resolve.
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

namespace amrt::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

int run(int argc, char** argv);

}  // namespace amrt::cli
