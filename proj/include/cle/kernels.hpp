#pragma once

#include <cstddef>

namespace cle::kernels {

// Serial reference kernels. Kept alongside the OpenMP versions so the
// parallel path can be checked for bitwise equality.
void matmul_serial(const double* a, const double* b, double* c,
                   std::size_t n, std::size_t k, std::size_t m);
// c[n x m] += variants used by backward: dA = dC * B^T, dB = A^T * dC
void matmul_nt_serial(const double* a, const double* bt, double* c,
                      std::size_t n, std::size_t k, std::size_t m);
void matmul_tn_serial(const double* at, const double* b, double* c,
                      std::size_t n, std::size_t k, std::size_t m);

// OpenMP kernels, parallel over output rows. Each output element is
// produced by exactly one thread with the serial accumulation order, so
// results are bitwise identical to the serial kernels.
void matmul(const double* a, const double* b, double* c,
            std::size_t n, std::size_t k, std::size_t m);
void matmul_nt(const double* a, const double* bt, double* c,
               std::size_t n, std::size_t k, std::size_t m);
void matmul_tn(const double* at, const double* b, double* c,
               std::size_t n, std::size_t k, std::size_t m);

}  // namespace cle::kernels
