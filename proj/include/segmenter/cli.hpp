#pragma once

#include <ostream>

namespace segmenter {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;  // bad flags, config, manifest or class-count mismatch
inline constexpr int kExitRuntime = 2;     // I/O, load and divergence failures

// Subcommands: gen-data, train, eval, infer, analyze, bench, checkpoint-inspect.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace segmenter
