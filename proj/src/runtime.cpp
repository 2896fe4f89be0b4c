#include "smamba/runtime.hpp"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace smamba {

RuntimeConfig& runtime() {
  static RuntimeConfig cfg;
  return cfg;
}

void init_threads_from_env() {
  const char* env = std::getenv("SMAMBA_THREADS");
  if (env == nullptr) return;
  try {
    int n = std::stoi(env);
    if (n >= 1) {
      runtime().max_threads = n;
#ifdef _OPENMP
      omp_set_num_threads(n);
#endif
    }
  } catch (...) {
    // Ignore malformed values; the default thread count stays in effect.
  }
}

int effective_threads() {
#ifdef _OPENMP
  int n = omp_get_max_threads();
#else
  int n = 1;
#endif
  int cap = runtime().max_threads;
  if (cap > 0 && cap < n) n = cap;
  return n;
}

bool parallel_enabled() { return effective_threads() > 1; }

}  // namespace smamba
