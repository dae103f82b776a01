#pragma once

#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rf4d {

/// Number of worker threads for parallel kernels: the OpenMP default, capped
/// by the RF4D_THREADS environment variable when set. Always >= 1.
inline int worker_count() {
#ifdef _OPENMP
  int n = omp_get_max_threads();
#else
  int n = 1;
#endif
  if (const char* env = std::getenv("RF4D_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1 && cap < n) n = cap;
  }
  return n < 1 ? 1 : n;
}

}  // namespace rf4d
