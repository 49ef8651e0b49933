#pragma once

#include <cstdint>

// Internal dense matrix kernels. Row-major throughout. All variants
// accumulate into C (callers zero-fill when they want a plain product).
// The k loop is strictly sequential per output element, so results are
// bit-reproducible run to run.

namespace loancast::detail {

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c);

// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c);

// C[M,N] += A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c);

// dst[cols,rows] = src[rows,cols]^T
template <typename T>
void transpose(int64_t rows, int64_t cols, const T* src, T* dst);

}  // namespace loancast::detail
