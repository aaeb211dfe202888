#pragma once

#include <cstdint>

#include "cle/tensor.hpp"

namespace cle {

// A learnable tensor together with its Adam moments. Moments travel with the
// parameter so checkpoints and structural expansion stay consistent.
struct Param {
  Tensor value;
  Tensor m, v;
  std::int64_t steps = 0;

  Param() = default;
  explicit Param(Tensor t)
      : value(std::move(t)), m(value.shape()), v(value.shape()) {}

  void reset_moments() {
    m = Tensor(value.shape());
    v = Tensor(value.shape());
    steps = 0;
  }
};

struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  // One minimizing step. If update_mask is given, entries with mask == 0 are
  // left untouched (value and moments).
  void step(Param& p, const Tensor& grad, double lr,
            const Tensor* update_mask = nullptr) const {
    if (!grad.same_shape(p.value))
      throw ShapeError("adam: grad shape " + Tensor::shape_str(grad.shape()) +
                       " vs param " + Tensor::shape_str(p.value.shape()));
    p.steps += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(p.steps));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(p.steps));
    for (std::size_t i = 0; i < grad.size(); ++i) {
      if (update_mask && (*update_mask)[i] == 0.0) continue;
      p.m[i] = beta1 * p.m[i] + (1.0 - beta1) * grad[i];
      p.v[i] = beta2 * p.v[i] + (1.0 - beta2) * grad[i] * grad[i];
      p.value[i] -= lr * (p.m[i] / bc1) / (std::sqrt(p.v[i] / bc2) + eps);
    }
  }
};

}  // namespace cle
