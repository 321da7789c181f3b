#pragma once

namespace salm2::cli {

// Full command-line surface: train, eval, predict, overlay, count-params,
// gen-synthetic. Returns the process exit code (0 only on full success).
int run(int argc, const char* const* argv);

}  // namespace salm2::cli
