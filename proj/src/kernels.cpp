#include "cle/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cle::kernels {

// All kernels accumulate into c; callers zero the output first.
// matmul:    c(n,m) += a(n,k) * b(k,m)
// matmul_nt: c(n,m) += a(n,k) * b(m,k)^T
// matmul_tn: c(n,m) += a(k,n)^T * b(k,m)

namespace {
constexpr std::size_t kParallelCutoff = 4096;  // n*k*m below this stays serial

inline void row_mm(const double* a, const double* b, double* c,
                   std::size_t i, std::size_t k, std::size_t m) {
  const double* ai = a + i * k;
  double* ci = c + i * m;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = ai[p];
    const double* bp = b + p * m;
    for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
  }
}

inline void row_mm_nt(const double* a, const double* bt, double* c,
                      std::size_t i, std::size_t k, std::size_t m) {
  const double* ai = a + i * k;
  double* ci = c + i * m;
  for (std::size_t j = 0; j < m; ++j) {
    const double* bj = bt + j * k;
    double acc = 0.0;
    for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
    ci[j] += acc;
  }
}

inline void row_mm_tn(const double* at, const double* b, double* c,
                      std::size_t i, std::size_t n, std::size_t k, std::size_t m) {
  double* ci = c + i * m;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = at[p * n + i];
    const double* bp = b + p * m;
    for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
  }
}
}  // namespace

void matmul_serial(const double* a, const double* b, double* c,
                   std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) row_mm(a, b, c, i, k, m);
}

void matmul_nt_serial(const double* a, const double* bt, double* c,
                      std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) row_mm_nt(a, bt, c, i, k, m);
}

void matmul_tn_serial(const double* at, const double* b, double* c,
                      std::size_t n, std::size_t k, std::size_t m) {
  // at is k x n; output row i is column i of at.
  for (std::size_t i = 0; i < n; ++i) row_mm_tn(at, b, c, i, n, k, m);
}

void matmul(const double* a, const double* b, double* c,
            std::size_t n, std::size_t k, std::size_t m) {
  if (n * k * m < kParallelCutoff) {
    matmul_serial(a, b, c, n, k, m);
    return;
  }
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
    row_mm(a, b, c, static_cast<std::size_t>(i), k, m);
}

void matmul_nt(const double* a, const double* bt, double* c,
               std::size_t n, std::size_t k, std::size_t m) {
  if (n * k * m < kParallelCutoff) {
    matmul_nt_serial(a, bt, c, n, k, m);
    return;
  }
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
    row_mm_nt(a, bt, c, static_cast<std::size_t>(i), k, m);
}

void matmul_tn(const double* at, const double* b, double* c,
               std::size_t n, std::size_t k, std::size_t m) {
  if (n * k * m < kParallelCutoff) {
    matmul_tn_serial(at, b, c, n, k, m);
    return;
  }
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
    row_mm_tn(at, b, c, static_cast<std::size_t>(i), n, k, m);
}

}  // namespace cle::kernels
