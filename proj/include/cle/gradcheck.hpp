#pragma once

#include <cstdint>

namespace cle {

struct GradcheckReport {
  double max_rel_graph = 0.0;  // random small-graph suite
  double max_rel_elbo = 0.0;   // frozen-noise ELBO suite (supervised + vae)
  int graphs_checked = 0;
  int elbo_params_checked = 0;

  bool ok(double tol_graph = 1e-4, double tol_elbo = 1e-3) const {
    return max_rel_graph < tol_graph && max_rel_elbo < tol_elbo;
  }
};

// Central-difference verification of reverse-mode gradients.
GradcheckReport run_gradcheck(std::uint64_t seed);

}  // namespace cle
