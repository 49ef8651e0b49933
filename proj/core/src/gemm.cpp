#include "gemm.hpp"

#include <vector>

namespace loancast::detail {

template <typename T>
void gemm_nn(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c) {
  // ikj order: streams one row of B per k step, vectorizes over j.
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      const T* brow = b + kk * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void transpose(int64_t rows, int64_t cols, const T* src, T* dst) {
  constexpr int64_t kTile = 32;
  for (int64_t i0 = 0; i0 < rows; i0 += kTile) {
    const int64_t i1 = std::min(rows, i0 + kTile);
    for (int64_t j0 = 0; j0 < cols; j0 += kTile) {
      const int64_t j1 = std::min(cols, j0 + kTile);
      for (int64_t i = i0; i < i1; ++i)
        for (int64_t j = j0; j < j1; ++j) dst[j * rows + i] = src[i * cols + j];
    }
  }
}

template <typename T>
void gemm_nt(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c) {
  std::vector<T> bt(static_cast<size_t>(k) * n);
  transpose(n, k, b, bt.data());
  gemm_nn(m, n, k, a, bt.data(), c);
}

template <typename T>
void gemm_tn(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c) {
  std::vector<T> at(static_cast<size_t>(m) * k);
  transpose(k, m, a, at.data());
  gemm_nn(m, n, k, at.data(), b, c);
}

template void gemm_nn<float>(int64_t, int64_t, int64_t, const float*, const float*, float*);
template void gemm_nn<double>(int64_t, int64_t, int64_t, const double*, const double*, double*);
template void gemm_nt<float>(int64_t, int64_t, int64_t, const float*, const float*, float*);
template void gemm_nt<double>(int64_t, int64_t, int64_t, const double*, const double*, double*);
template void gemm_tn<float>(int64_t, int64_t, int64_t, const float*, const float*, float*);
template void gemm_tn<double>(int64_t, int64_t, int64_t, const double*, const double*, double*);
template void transpose<float>(int64_t, int64_t, const float*, float*);
template void transpose<double>(int64_t, int64_t, const double*, double*);

}  // namespace loancast::detail
