#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fusedet {

// Process-wide worker count for batch/GEMM parallelism. Work is partitioned
// statically by index, so results are bitwise identical for any thread count.
inline int& thread_count_ref() {
  static int n = 1;
  return n;
}

inline void set_num_threads(int n) { thread_count_ref() = n < 1 ? 1 : n; }
inline int num_threads() { return thread_count_ref(); }

template <class F>
void parallel_for(int64_t n, F&& fn) {
  const int nt = num_threads();
#ifdef _OPENMP
  if (nt > 1 && n > 1) {
#pragma omp parallel for num_threads(nt) schedule(static)
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
#endif
  for (int64_t i = 0; i < n; ++i) fn(i);
}

}  // namespace fusedet
