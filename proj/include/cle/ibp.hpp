#pragma once

#include <optional>
#include <vector>

#include "cle/dist.hpp"
#include "cle/graph.hpp"
#include "cle/optim.hpp"
#include "cle/rng.hpp"

namespace cle {

inline double softplus_inv(double y) { return std::log(std::expm1(y)); }

struct GaussianParams {
  Param mu, raw_sigma;
};

struct KumaraswamyParams {
  Param raw_a, raw_b;
};

// One IBP-masked hidden layer: Gaussian weight posterior over V (D x K),
// Kumaraswamy stick posteriors (K), Concrete mask logits rho (D x K), and a
// Gaussian bias posterior (1 x K) whose contribution is scaled by the
// column-wise maximum of the mask.
struct IbpLayerPosterior {
  std::size_t input_dim = 0;  // D
  std::size_t width = 0;      // K (truncation)
  GaussianParams weights;
  GaussianParams bias;
  Param mask_logits;
  KumaraswamyParams sticks;
  double alpha = 30.0;

  static IbpLayerPosterior init(std::size_t d, std::size_t k, double alpha,
                                double sigma0, RngStream& rng);
  // Appends g fresh columns (weights, bias, mask logits, sticks).
  void grow_columns(std::size_t g, double sigma0, RngStream& rng);
  // Appends g fresh input rows (weights, mask logits).
  void grow_rows(std::size_t g, double sigma0, RngStream& rng);
};

// pi_k = prod_{i<=k} nu_i, computed in log space.
Tensor stick_pis(const Tensor& nu);

// Deterministic mask probabilities theta = sigmoid(rho + logit(pi)) using
// posterior-mean sticks. Used for hardening and eval-deterministic forwards.
Tensor eval_theta(const IbpLayerPosterior& layer);

// 1[soft > 0.5], strict inequality.
Tensor harden(const Tensor& soft);

// Elementwise OR; narrower masks are padded with zero columns.
Tensor union_masks(const std::vector<Tensor>& masks);

// Pads a binary D x K mask with zeros to d x k.
Tensor pad_mask(const Tensor& mask, std::size_t d, std::size_t k);

// Eq.-12 style growth count: trailing all-zero columns are counted via
// C_j = C_{j+1} * prod_d 1[B_{d,j} = 0] with C_{K+1} = 1; the layer grows by
// G = reserve - sum_j C_j new columns (no-op when G <= 0).
std::size_t expansion_count(const Tensor& binary_mask, std::size_t reserve);
std::size_t expand(IbpLayerPosterior& layer, const Tensor& binary_mask,
                   std::size_t reserve, double sigma0, RngStream& rng);

// ---- graph construction -------------------------------------------------

enum class LrGroup { Std, Ibp, Head };

// Binds persistent Params to graph leaves and remembers where gradients
// should be routed after backward().
class Binder {
 public:
  explicit Binder(Graph& g) : g_(g) {}

  NodeId bind(Param& p, LrGroup group, Tensor update_mask = Tensor());
  NodeId constant(const Param& p) { return g_.constant(p.value); }

  struct Entry {
    NodeId node;
    Param* param;
    LrGroup group;
    Tensor update_mask;  // empty = unrestricted
  };
  std::vector<Entry>& entries() { return entries_; }
  Graph& graph() { return g_; }

 private:
  Graph& g_;
  std::vector<Entry> entries_;
};

struct LayerBind {
  NodeId mu, raw_sigma, b_mu, b_raw_sigma;  // Gaussian part
  NodeId rho = -1, raw_a = -1, raw_b = -1;  // IBP part (may be constants)
};

struct LayerBindOptions {
  bool train_gauss = true;
  bool train_ibp = true;
  const Tensor* gauss_update_mask = nullptr;  // restrict mu/raw_sigma updates
};

LayerBind bind_layer(Binder& b, IbpLayerPosterior& layer,
                     const LayerBindOptions& opt);

struct LayerForward {
  NodeId act;               // N x K (pre-activation)
  NodeId kl_mask = -1;      // scalar MC mask-KL term (stochastic mode only)
  NodeId theta_logits = -1;
};

// Stochastic pass: samples sticks, soft Concrete mask, weights and bias.
LayerForward layer_forward_stochastic(Binder& b, NodeId x,
                                      const LayerBind& lb,
                                      const IbpLayerPosterior& layer,
                                      double lambda, RngStream& noise);

// Frozen-mask pass: supplied binary mask; weights/bias sampled when noise is
// given, posterior means otherwise (eval-deterministic).
LayerForward layer_forward_frozen(Binder& b, NodeId x, const LayerBind& lb,
                                  const IbpLayerPosterior& layer,
                                  const Tensor& binary_mask, RngStream* noise);

// Dense pass: mask identically one (VCL/naive baselines). Weights sampled
// when noise is given, means otherwise.
LayerForward layer_forward_dense(Binder& b, NodeId x, const LayerBind& lb,
                                 const IbpLayerPosterior& layer,
                                 RngStream* noise);

}  // namespace cle
