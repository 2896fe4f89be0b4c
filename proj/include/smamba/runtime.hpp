#pragma once

#include <cstdint>

namespace smamba {

// Process-wide execution knobs.
//
// deterministic: forces serial reduction order in ops that would otherwise
//   use parallel reductions (sum/mean/loss accumulations). Per-element
//   parallel loops are bit-stable regardless of thread count and stay
//   enabled either way.
// check_finite: validate every op output for NaN/Inf and throw NumericError.
struct RuntimeConfig {
  int max_threads = 0;  // 0 = use OpenMP default
  bool deterministic = true;
  bool check_finite = true;
};

RuntimeConfig& runtime();

// Reads the SMAMBA_THREADS env var (if set) and caps the OpenMP thread
// count accordingly. Called once at CLI startup.
void init_threads_from_env();

// Number of threads ops should use right now.
int effective_threads();

// True when ops may spawn OpenMP teams (threads > 1).
bool parallel_enabled();

}  // namespace smamba
