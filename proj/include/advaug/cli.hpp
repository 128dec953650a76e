#pragma once

#include <ostream>

namespace advaug::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  // Bad configuration, missing or unreadable files, incompatible pools.
  kInputError = 2,
  // Corrupt checkpoints, structural mismatches, non-finite losses.
  kModelError = 3,
  kInternalError = 4,
};

// Default output directory when --out is not given.
inline constexpr const char* kOutputDirEnv = "ADVAUG_OUTPUT_DIR";

// Subcommands: gen-data, train, compare, simplify, pencil, optimize-single,
// export, eval. argv[0] is the program name.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace advaug::cli
