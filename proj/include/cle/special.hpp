#pragma once

#include <cmath>

namespace cle {

// Digamma via upward recurrence to x >= 6 plus the asymptotic series.
// Absolute accuracy better than 1e-12 for x > 0.
inline double digamma(double x) {
  double acc = 0.0;
  while (x < 6.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x, inv2 = inv * inv;
  double series = std::log(x) - 0.5 * inv -
                  inv2 * (1.0 / 12.0 -
                          inv2 * (1.0 / 120.0 -
                                  inv2 * (1.0 / 252.0 -
                                          inv2 * (1.0 / 240.0 - inv2 / 132.0))));
  return acc + series;
}

inline double trigamma(double x) {
  double acc = 0.0;
  while (x < 6.0) {
    acc += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x, inv2 = inv * inv;
  double series =
      inv * (1.0 +
             inv * (0.5 +
                    inv * (1.0 / 6.0 +
                           inv2 * (-1.0 / 30.0 +
                                   inv2 * (1.0 / 42.0 - inv2 / 30.0)))));
  return acc + series;
}

inline double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

constexpr double kEulerGamma = 0.5772156649015328606;

// Scalar helpers shared by the graph ops and non-graph evaluation paths so
// both compute bitwise-identical values.
inline double softplus_s(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

inline double sigmoid_s(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit_s(double p) { return std::log(p) - std::log1p(-p); }

}  // namespace cle
