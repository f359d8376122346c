#pragma once

#include <cstddef>
#include <cstring>

// Small dense kernels for the feature-matrix products. The shapes here are
// tall-and-skinny (thousands of feature columns against <= 6 outputs), which
// generic GEMM paths handle poorly; these register-tiled loops run within a
// factor ~1.5 of the machine's FMA peak. Results are accumulated in a fixed
// order, so they are bit-reproducible run to run.

namespace mftop::detail {

#if defined(__GNUC__) || defined(__clang__)
#define MFTOP_VEXT 1

template <class T>
struct SimdTraits {
  typedef T Pack __attribute__((vector_size(64)));
  static constexpr int lanes = int(64 / sizeof(T));
};

template <class T>
inline T hsum(typename SimdTraits<T>::Pack v) {
  T s = T(0);
  for (int i = 0; i < SimdTraits<T>::lanes; ++i) s += v[i];
  return s;
}
#endif

// C (m x NC, row-major) = A (m x K, row-major) * B (K x NC, column-major).
template <int NC, class T>
void gemm_rows(const T* A, const T* B, T* C, int m, long K) {
#ifdef MFTOP_VEXT
  using Pack = typename SimdTraits<T>::Pack;
  constexpr int L = SimdTraits<T>::lanes;
  const long kv = K - (K % L);
  int r = 0;
  for (; r + 3 <= m; r += 3) {
    const T* a0 = A + std::size_t(r + 0) * K;
    const T* a1 = A + std::size_t(r + 1) * K;
    const T* a2 = A + std::size_t(r + 2) * K;
    Pack acc0[NC], acc1[NC], acc2[NC];
    for (int j = 0; j < NC; ++j) acc0[j] = acc1[j] = acc2[j] = Pack{};
    for (long k = 0; k < kv; k += L) {
      Pack v0, v1, v2;
      std::memcpy(&v0, a0 + k, 64);
      std::memcpy(&v1, a1 + k, 64);
      std::memcpy(&v2, a2 + k, 64);
      for (int j = 0; j < NC; ++j) {
        Pack b;
        std::memcpy(&b, B + std::size_t(j) * K + k, 64);
        acc0[j] += v0 * b;
        acc1[j] += v1 * b;
        acc2[j] += v2 * b;
      }
    }
    for (int j = 0; j < NC; ++j) {
      T s0 = hsum<T>(acc0[j]), s1 = hsum<T>(acc1[j]), s2 = hsum<T>(acc2[j]);
      for (long k = kv; k < K; ++k) {
        const T b = B[std::size_t(j) * K + k];
        s0 += a0[k] * b;
        s1 += a1[k] * b;
        s2 += a2[k] * b;
      }
      C[std::size_t(r + 0) * NC + j] = s0;
      C[std::size_t(r + 1) * NC + j] = s1;
      C[std::size_t(r + 2) * NC + j] = s2;
    }
  }
  for (; r < m; ++r) {
    const T* a = A + std::size_t(r) * K;
    for (int j = 0; j < NC; ++j) {
      Pack acc{};
      for (long k = 0; k < kv; k += L) {
        Pack v, b;
        std::memcpy(&v, a + k, 64);
        std::memcpy(&b, B + std::size_t(j) * K + k, 64);
        acc += v * b;
      }
      T s = hsum<T>(acc);
      for (long k = kv; k < K; ++k) s += a[k] * B[std::size_t(j) * K + k];
      C[std::size_t(r) * NC + j] = s;
    }
  }
#else
  for (int r = 0; r < m; ++r)
    for (int j = 0; j < NC; ++j) {
      T s = T(0);
      for (long k = 0; k < K; ++k) s += A[std::size_t(r) * K + k] * B[std::size_t(j) * K + k];
      C[std::size_t(r) * NC + j] = s;
    }
#endif
}

// W (K x NC, column-major) += A^T (K x m) * G (m x NC, row-major).
// Register-resident k tiles; A should be chunk-sized so it stays cached
// across the tile passes.
template <int NC, class T>
void gemm_accumulate(const T* A, const T* G, T* W, int m, long K) {
#ifdef MFTOP_VEXT
  using Pack = typename SimdTraits<T>::Pack;
  constexpr int L = SimdTraits<T>::lanes;
  const long kv = K - (K % L);
  for (long k0 = 0; k0 < kv; k0 += L) {
    Pack acc[NC];
    for (int j = 0; j < NC; ++j) acc[j] = Pack{};
    const T* a = A + k0;
    const T* g = G;
    for (int r = 0; r < m; ++r, a += K, g += NC) {
      Pack av;
      std::memcpy(&av, a, 64);
      for (int j = 0; j < NC; ++j) acc[j] += (Pack{} + g[j]) * av;
    }
    for (int j = 0; j < NC; ++j) {
      T* w = W + std::size_t(j) * K + k0;
      Pack cur;
      std::memcpy(&cur, w, 64);
      cur += acc[j];
      std::memcpy(w, &cur, 64);
    }
  }
  for (long k = kv; k < K; ++k) {
    T acc[NC] = {};
    for (int r = 0; r < m; ++r)
      for (int j = 0; j < NC; ++j) acc[j] += A[std::size_t(r) * K + k] * G[std::size_t(r) * NC + j];
    for (int j = 0; j < NC; ++j) W[std::size_t(j) * K + k] += acc[j];
  }
#else
  for (long k = 0; k < K; ++k)
    for (int j = 0; j < NC; ++j) {
      T s = T(0);
      for (int r = 0; r < m; ++r) s += A[std::size_t(r) * K + k] * G[std::size_t(r) * NC + j];
      W[std::size_t(j) * K + k] += s;
    }
#endif
}

}  // namespace mftop::detail
