#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>

#include "fusedet/core/parallel.hpp"

namespace fusedet {

// Row-major GEMM: C[M,N] = alpha * op(A)[M,K] * op(B)[K,N] + beta * C.
//
// Two inner-kernel styles:
//   op(B) plain      -> broadcast-A / vector-B FMA kernel over contiguous B rows
//   op(B) transposed -> per-element dot product over contiguous A and B rows
// Both assign each C element to exactly one thread, so output is independent
// of the thread count.

namespace detail {

template <class T>
constexpr int64_t gemm_ntile() {
  return sizeof(T) == 4 ? 16 : 8;
}

template <class T>
inline T a_elem(const T* A, int64_t lda, bool transA, int64_t m, int64_t k) {
  return transA ? A[k * lda + m] : A[m * lda + k];
}

// C rows [m0, m1) x cols [n0, n1), B not transposed.
template <class T>
void gemm_nn_block(int64_t m0, int64_t m1, int64_t n0, int64_t n1, int64_t K, T alpha,
                   const T* A, int64_t lda, bool transA, const T* B, int64_t ldb, T* C,
                   int64_t ldc) {
  constexpr int64_t NT = gemm_ntile<T>();
  constexpr int64_t MR = 4;
  for (int64_t m = m0; m < m1; m += MR) {
    const int64_t mr = (m + MR <= m1) ? MR : (m1 - m);
    int64_t n = n0;
    for (; n + NT <= n1; n += NT) {
      T acc[MR][NT];
      for (int64_t i = 0; i < mr; ++i)
        for (int64_t j = 0; j < NT; ++j) acc[i][j] = T(0);
      for (int64_t k = 0; k < K; ++k) {
        const T* __restrict__ brow = B + k * ldb + n;
        for (int64_t i = 0; i < mr; ++i) {
          const T a = alpha * a_elem(A, lda, transA, m + i, k);
          T* __restrict__ ai = acc[i];
#pragma omp simd
          for (int64_t j = 0; j < NT; ++j) ai[j] += a * brow[j];
        }
      }
      for (int64_t i = 0; i < mr; ++i) {
        T* crow = C + (m + i) * ldc + n;
        for (int64_t j = 0; j < NT; ++j) crow[j] += acc[i][j];
      }
    }
    if (n < n1) {
      for (int64_t k = 0; k < K; ++k) {
        const T* brow = B + k * ldb;
        for (int64_t i = 0; i < mr; ++i) {
          const T a = alpha * a_elem(A, lda, transA, m + i, k);
          T* crow = C + (m + i) * ldc;
          for (int64_t j = n; j < n1; ++j) crow[j] += a * brow[j];
        }
      }
    }
  }
}

// C rows [m0, m1), B transposed (B is N x K row-major): dot products over K.
template <class T>
void gemm_nt_block(int64_t m0, int64_t m1, int64_t N, int64_t K, T alpha, const T* A,
                   int64_t lda, bool transA, const T* B, int64_t ldb, T* C, int64_t ldc) {
  for (int64_t m = m0; m < m1; ++m) {
    for (int64_t n = 0; n < N; ++n) {
      const T* __restrict__ brow = B + n * ldb;
      T s = T(0);
      if (!transA) {
        const T* __restrict__ arow = A + m * lda;
#pragma omp simd reduction(+ : s)
        for (int64_t k = 0; k < K; ++k) s += arow[k] * brow[k];
      } else {
        for (int64_t k = 0; k < K; ++k) s += A[k * lda + m] * brow[k];
      }
      C[m * ldc + n] += alpha * s;
    }
  }
}

template <class T>
std::vector<T>& gemm_scratch() {
  thread_local std::vector<T> buf;
  return buf;
}

}  // namespace detail

template <class T>
void gemm(bool transA, bool transB, int64_t M, int64_t N, int64_t K, T alpha, const T* A,
          int64_t lda, const T* B, int64_t ldb, T beta, T* C, int64_t ldc) {
  // The broadcast kernel needs op(B) rows contiguous; repack transposed B
  // once instead of running strided dot products (which dominate profiles).
  if (transB && static_cast<int64_t>(K) * N > 2048) {
    auto& bt = detail::gemm_scratch<T>();
    bt.resize(static_cast<size_t>(K * N));
    const int nt_pack = num_threads();
    if (nt_pack > 1 && K >= 2 * nt_pack) {
      parallel_for(K, [&](int64_t k) {
        T* dst = bt.data() + k * N;
        for (int64_t n = 0; n < N; ++n) dst[n] = B[n * ldb + k];
      });
    } else {
      for (int64_t k = 0; k < K; ++k) {
        T* dst = bt.data() + k * N;
        for (int64_t n = 0; n < N; ++n) dst[n] = B[n * ldb + k];
      }
    }
    gemm<T>(transA, false, M, N, K, alpha, A, lda, bt.data(), N, beta, C, ldc);
    return;
  }
  if (beta != T(1)) {
    for (int64_t m = 0; m < M; ++m) {
      T* crow = C + m * ldc;
      if (beta == T(0))
        std::memset(crow, 0, sizeof(T) * static_cast<size_t>(N));
      else
        for (int64_t n = 0; n < N; ++n) crow[n] *= beta;
    }
  }
  const int nt = num_threads();
  if (!transB) {
    if (nt > 1 && M >= 8) {
      const int64_t chunk = (M + nt - 1) / nt;
      parallel_for(nt, [&](int64_t t) {
        const int64_t m0 = t * chunk, m1 = std::min<int64_t>(M, m0 + chunk);
        if (m0 < m1)
          detail::gemm_nn_block(m0, m1, int64_t(0), N, K, alpha, A, lda, transA, B, ldb, C, ldc);
      });
    } else if (nt > 1 && N >= 2 * detail::gemm_ntile<T>()) {
      const int64_t tiles = (N + detail::gemm_ntile<T>() - 1) / detail::gemm_ntile<T>();
      const int64_t per = (tiles + nt - 1) / nt;
      parallel_for(nt, [&](int64_t t) {
        const int64_t n0 = t * per * detail::gemm_ntile<T>();
        const int64_t n1 = std::min<int64_t>(N, (t + 1) * per * detail::gemm_ntile<T>());
        if (n0 < n1)
          detail::gemm_nn_block(int64_t(0), M, n0, n1, K, alpha, A, lda, transA, B, ldb, C, ldc);
      });
    } else {
      detail::gemm_nn_block(int64_t(0), M, int64_t(0), N, K, alpha, A, lda, transA, B, ldb, C, ldc);
    }
  } else {
    if (nt > 1 && M >= 2) {
      const int64_t chunk = (M + nt - 1) / nt;
      parallel_for(nt, [&](int64_t t) {
        const int64_t m0 = t * chunk, m1 = std::min<int64_t>(M, m0 + chunk);
        if (m0 < m1) detail::gemm_nt_block(m0, m1, N, K, alpha, A, lda, transA, B, ldb, C, ldc);
      });
    } else {
      detail::gemm_nt_block(int64_t(0), M, N, K, alpha, A, lda, transA, B, ldb, C, ldc);
    }
  }
}

}  // namespace fusedet
