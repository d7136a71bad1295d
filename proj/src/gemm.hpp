#pragma once

// Dense row-major matrix kernels used by the autodiff operations.

#include <cstddef>
#include <span>
#include <vector>

namespace lmnet::detail {

/// C[n×m] (+)= A[n×k] · B[k×m]. Each entry of C is accumulated over k in
/// increasing order by the same instruction sequence, whatever the row's
/// position, which makes per-row results independent of row order.
void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
             std::size_t m, bool accumulate);

/// C[k×m] (+)= A[n×k]ᵀ · B[n×m].
void gemm_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
             std::size_t m, bool accumulate);

/// C[n×m] (+)= A[n×k] · B[m×k]ᵀ.
void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
             std::size_t m, bool accumulate);

std::vector<double> transpose(const double* a, std::size_t rows, std::size_t cols);

}  // namespace lmnet::detail
