#include "gemm.hpp"

#include <algorithm>
#include <cstring>

namespace lmnet::detail {

namespace {

constexpr std::size_t kRows = 4;
constexpr std::size_t kCols = 32;

template <std::size_t R, std::size_t J>
inline void block_full(const double* a, const double* b, std::size_t k, std::size_t m,
                       std::size_t i0, std::size_t j0, double (&acc)[kRows][kCols]) {
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double* brow = b + kk * m + j0;
    for (std::size_t r = 0; r < R; ++r) {
      const double av = a[(i0 + r) * k + kk];
      for (std::size_t j = 0; j < J; ++j) acc[r][j] += av * brow[j];
    }
  }
}

inline void block_edge(const double* a, const double* b, std::size_t k, std::size_t m,
                       std::size_t i0, std::size_t j0, std::size_t rn, std::size_t jn,
                       double (&acc)[kRows][kCols]) {
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double* brow = b + kk * m + j0;
    for (std::size_t r = 0; r < rn; ++r) {
      const double av = a[(i0 + r) * k + kk];
      for (std::size_t j = 0; j < jn; ++j) acc[r][j] += av * brow[j];
    }
  }
}

}  // namespace

void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
             std::size_t m, bool accumulate) {
  for (std::size_t i0 = 0; i0 < n; i0 += kRows) {
    const std::size_t rn = std::min(kRows, n - i0);
    for (std::size_t j0 = 0; j0 < m; j0 += kCols) {
      const std::size_t jn = std::min(kCols, m - j0);
      double acc[kRows][kCols] = {};
      if (rn == kRows && jn == kCols) {
        block_full<kRows, kCols>(a, b, k, m, i0, j0, acc);
      } else {
        block_edge(a, b, k, m, i0, j0, rn, jn, acc);
      }
      for (std::size_t r = 0; r < rn; ++r) {
        double* crow = c + (i0 + r) * m + j0;
        if (accumulate) {
          for (std::size_t j = 0; j < jn; ++j) crow[j] += acc[r][j];
        } else {
          std::memcpy(crow, acc[r], jn * sizeof(double));
        }
      }
    }
  }
}

std::vector<double> transpose(const double* a, std::size_t rows, std::size_t cols) {
  std::vector<double> t(rows * cols);
  constexpr std::size_t kTile = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += kTile) {
    const std::size_t i1 = std::min(rows, i0 + kTile);
    for (std::size_t j0 = 0; j0 < cols; j0 += kTile) {
      const std::size_t j1 = std::min(cols, j0 + kTile);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) t[j * rows + i] = a[i * cols + j];
    }
  }
  return t;
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
             std::size_t m, bool accumulate) {
  // Row panels keep the transposed block and the B panel cache-resident.
  constexpr std::size_t kPanel = 256;
  if (n == 0 && !accumulate) std::fill(c, c + k * m, 0.0);
  for (std::size_t r0 = 0; r0 < n; r0 += kPanel) {
    const std::size_t rows = std::min(kPanel, n - r0);
    const std::vector<double> at = transpose(a + r0 * k, rows, k);
    gemm_nn(at.data(), b + r0 * m, c, k, rows, m, accumulate || r0 > 0);
  }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
             std::size_t m, bool accumulate) {
  const std::vector<double> bt = transpose(b, m, k);
  gemm_nn(a, bt.data(), c, n, k, m, accumulate);
}

}  // namespace lmnet::detail
