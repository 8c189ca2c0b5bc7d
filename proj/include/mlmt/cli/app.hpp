#pragma once

#include <iosfwd>

namespace mlmt::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Environment variable naming the directory that relative dataset paths
/// are resolved against.
inline constexpr const char* kDataRootEnv = "MLMT_DATA_ROOT";

/// Entry point of the `mlmt` tool. Returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mlmt::cli
