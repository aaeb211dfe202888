#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "cle/tensor.hpp"

namespace cle {

// Named, seed-derived random stream. All randomness flows from one master
// seed; a stream is identified by (name, indices), so any phase of a run can
// recreate its stream independently. Samplers avoid std::*_distribution to
// keep the draw sequence free of hidden per-distribution state.
class RngStream {
 public:
  RngStream() : engine_(0) {}
  RngStream(std::uint64_t master, std::string_view name, std::uint64_t i0 = 0,
            std::uint64_t i1 = 0)
      : engine_(derive(master, name, i0, i1)) {}

  // uniform in [0,1)
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // uniform clamped away from {0,1}; safe for log/logit transforms
  double uniform_open(double eps = 1e-8) {
    double u = uniform();
    if (u < eps) u = eps;
    if (u > 1.0 - eps) u = 1.0 - eps;
    return u;
  }

  // Box-Muller, fresh pair per call (stateless draws)
  double normal() {
    const double u1 = uniform_open(1e-300);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  std::uint64_t integer(std::uint64_t n) {  // uniform in [0, n)
    // rejection to avoid modulo bias
    const std::uint64_t lim = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do { x = engine_(); } while (x >= lim);
    return x % n;
  }

  Tensor normal_tensor(std::vector<std::size_t> shape) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = normal();
    return t;
  }

  Tensor uniform_open_tensor(std::vector<std::size_t> shape, double eps = 1e-8) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform_open(eps);
    return t;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[integer(i)]);
  }

  static std::uint64_t derive(std::uint64_t master, std::string_view name,
                              std::uint64_t i0, std::uint64_t i1) {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a over the stream name
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    return splitmix(splitmix(splitmix(master ^ h) + i0) + i1);
  }

 private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::mt19937_64 engine_;
};

}  // namespace cle
