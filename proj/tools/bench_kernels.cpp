// Times the serial reference kernels against the OpenMP ones and checks
// bitwise agreement on the way.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#include "cle/kernels.hpp"
#include "cle/rng.hpp"

namespace {

using clock_type = std::chrono::steady_clock;

double time_ms(void (*fn)(const double*, const double*, double*, std::size_t,
                          std::size_t, std::size_t),
               const std::vector<double>& a, const std::vector<double>& b,
               std::vector<double>& c, std::size_t n, std::size_t k,
               std::size_t m, int reps) {
  const auto t0 = clock_type::now();
  for (int r = 0; r < reps; ++r) {
    std::fill(c.begin(), c.end(), 0.0);
    fn(a.data(), b.data(), c.data(), n, k, m);
  }
  const auto t1 = clock_type::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

}  // namespace

int main() {
  cle::RngStream rng(42, "bench");
  std::printf("%8s %10s %10s %8s\n", "size", "serial ms", "omp ms", "speedup");
  for (std::size_t s : {64, 128, 256, 512}) {
    std::vector<double> a(s * s), b(s * s), c1(s * s), c2(s * s);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    const int reps = s <= 128 ? 50 : 10;
    const double ts = time_ms(cle::kernels::matmul_serial, a, b, c1, s, s, s, reps);
    const double tp = time_ms(cle::kernels::matmul, a, b, c2, s, s, s, reps);
    if (std::memcmp(c1.data(), c2.data(), s * s * sizeof(double)) != 0) {
      std::fprintf(stderr, "mismatch at size %zu\n", s);
      return 1;
    }
    std::printf("%8zu %10.3f %10.3f %8.2f\n", s, ts, tp, ts / tp);
  }
  return 0;
}
