#include "cle/ibp.hpp"

#include <cmath>
#include <functional>

#include "cle/special.hpp"

namespace cle {

namespace {

// Fresh-parameter scheme shared by first-task init and expansion.
struct FreshScheme {
  double sigma0;
  double alpha;
  double mu(RngStream& rng) const { return 0.1 * rng.normal(); }
  double raw_sigma() const { return softplus_inv(0.1 * sigma0); }
  double rho() const { return 0.0; }
  double raw_a() const { return softplus_inv(alpha); }
  double raw_b() const { return softplus_inv(1.0); }
};

// Rebuilds a D x K matrix param as D x (K+G), preserving old entries and
// their moments; new entries get `fill`.
void pad_matrix_cols(Param& p, std::size_t d, std::size_t k, std::size_t g,
                     const std::function<double()>& fill) {
  Tensor nv({d, k + g}), nm({d, k + g}), nvv({d, k + g});
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = 0; c < k; ++c) {
      nv[r * (k + g) + c] = p.value[r * k + c];
      nm[r * (k + g) + c] = p.m[r * k + c];
      nvv[r * (k + g) + c] = p.v[r * k + c];
    }
    for (std::size_t c = k; c < k + g; ++c) nv[r * (k + g) + c] = fill();
  }
  p.value = std::move(nv);
  p.m = std::move(nm);
  p.v = std::move(nvv);
}

void pad_vector(Param& p, std::size_t k, std::size_t g,
                const std::function<double()>& fill) {
  Tensor nv({k + g}), nm({k + g}), nvv({k + g});
  for (std::size_t i = 0; i < k; ++i) {
    nv[i] = p.value[i];
    nm[i] = p.m[i];
    nvv[i] = p.v[i];
  }
  for (std::size_t i = k; i < k + g; ++i) nv[i] = fill();
  p.value = std::move(nv);
  p.m = std::move(nm);
  p.v = std::move(nvv);
}

void pad_matrix_rows(Param& p, std::size_t d, std::size_t k, std::size_t g,
                     const std::function<double()>& fill) {
  Tensor nv({d + g, k}), nm({d + g, k}), nvv({d + g, k});
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < k; ++c) {
      nv[r * k + c] = p.value[r * k + c];
      nm[r * k + c] = p.m[r * k + c];
      nvv[r * k + c] = p.v[r * k + c];
    }
  for (std::size_t r = d; r < d + g; ++r)
    for (std::size_t c = 0; c < k; ++c) nv[r * k + c] = fill();
  p.value = std::move(nv);
  p.m = std::move(nm);
  p.v = std::move(nvv);
}

}  // namespace

IbpLayerPosterior IbpLayerPosterior::init(std::size_t d, std::size_t k,
                                          double alpha, double sigma0,
                                          RngStream& rng) {
  if (k == 0) throw ShapeError("IbpLayerPosterior: truncation K must be > 0");
  FreshScheme fs{sigma0, alpha};
  IbpLayerPosterior l;
  l.input_dim = d;
  l.width = k;
  l.alpha = alpha;

  Tensor mu({d, k});
  for (std::size_t i = 0; i < mu.size(); ++i) mu[i] = fs.mu(rng);
  l.weights.mu = Param(std::move(mu));
  l.weights.raw_sigma = Param(Tensor({d, k}, fs.raw_sigma()));

  Tensor bmu({1, k});
  for (std::size_t i = 0; i < bmu.size(); ++i) bmu[i] = fs.mu(rng);
  l.bias.mu = Param(std::move(bmu));
  l.bias.raw_sigma = Param(Tensor({1, k}, fs.raw_sigma()));

  l.mask_logits = Param(Tensor({d, k}, fs.rho()));
  l.sticks.raw_a = Param(Tensor({k}, fs.raw_a()));
  l.sticks.raw_b = Param(Tensor({k}, fs.raw_b()));
  return l;
}

void IbpLayerPosterior::grow_columns(std::size_t g, double sigma0,
                                     RngStream& rng) {
  if (g == 0) return;
  FreshScheme fs{sigma0, alpha};
  pad_matrix_cols(weights.mu, input_dim, width, g, [&] { return fs.mu(rng); });
  pad_matrix_cols(weights.raw_sigma, input_dim, width, g,
                  [&] { return fs.raw_sigma(); });
  pad_matrix_cols(bias.mu, 1, width, g, [&] { return fs.mu(rng); });
  pad_matrix_cols(bias.raw_sigma, 1, width, g, [&] { return fs.raw_sigma(); });
  pad_matrix_cols(mask_logits, input_dim, width, g, [&] { return fs.rho(); });
  pad_vector(sticks.raw_a, width, g, [&] { return fs.raw_a(); });
  pad_vector(sticks.raw_b, width, g, [&] { return fs.raw_b(); });
  width += g;
}

void IbpLayerPosterior::grow_rows(std::size_t g, double sigma0,
                                  RngStream& rng) {
  if (g == 0) return;
  FreshScheme fs{sigma0, alpha};
  pad_matrix_rows(weights.mu, input_dim, width, g, [&] { return fs.mu(rng); });
  pad_matrix_rows(weights.raw_sigma, input_dim, width, g,
                  [&] { return fs.raw_sigma(); });
  pad_matrix_rows(mask_logits, input_dim, width, g, [&] { return fs.rho(); });
  input_dim += g;
}

Tensor stick_pis(const Tensor& nu) {
  Tensor pi(nu.shape());
  double log_pi = 0.0;
  for (std::size_t i = 0; i < nu.size(); ++i) {
    log_pi += std::log(nu[i]);
    pi[i] = std::exp(log_pi);
  }
  return pi;
}

Tensor eval_theta(const IbpLayerPosterior& layer) {
  const std::size_t d = layer.input_dim, k = layer.width;
  // Kumaraswamy mean: b * B(1 + 1/a, b)
  Tensor nu_mean({k});
  for (std::size_t j = 0; j < k; ++j) {
    const double av = softplus_s(layer.sticks.raw_a.value[j]);
    const double bv = softplus_s(layer.sticks.raw_b.value[j]);
    nu_mean[j] = bv * std::exp(log_beta(1.0 + 1.0 / av, bv));
    nu_mean[j] = std::min(1.0 - 1e-12, std::max(1e-12, nu_mean[j]));
  }
  Tensor pi = stick_pis(nu_mean);
  Tensor theta({d, k});
  for (std::size_t j = 0; j < k; ++j) {
    const double p = std::min(1.0 - 1e-12, std::max(1e-12, pi[j]));
    const double lp = std::log(p) - std::log1p(-p);
    for (std::size_t r = 0; r < d; ++r)
      theta[r * k + j] = sigmoid_s(layer.mask_logits.value[r * k + j] + lp);
  }
  return theta;
}

Tensor harden(const Tensor& soft) {
  Tensor b(soft.shape());
  for (std::size_t i = 0; i < soft.size(); ++i) b[i] = soft[i] > 0.5 ? 1.0 : 0.0;
  return b;
}

Tensor pad_mask(const Tensor& mask, std::size_t d, std::size_t k) {
  const std::size_t md = mask.shape()[0], mk = mask.shape()[1];
  if (md == d && mk == k) return mask;
  if (md > d || mk > k)
    throw ShapeError("pad_mask: mask larger than target shape");
  Tensor out({d, k});
  for (std::size_t r = 0; r < md; ++r)
    for (std::size_t c = 0; c < mk; ++c) out[r * k + c] = mask[r * mk + c];
  return out;
}

Tensor union_masks(const std::vector<Tensor>& masks) {
  if (masks.empty()) throw ShapeError("union_masks: empty list");
  std::size_t d = 0, k = 0;
  for (const auto& m : masks) {
    d = std::max(d, m.shape()[0]);
    k = std::max(k, m.shape()[1]);
  }
  Tensor out({d, k});
  for (const auto& m : masks) {
    const std::size_t md = m.shape()[0], mk = m.shape()[1];
    for (std::size_t r = 0; r < md; ++r)
      for (std::size_t c = 0; c < mk; ++c)
        if (m[r * mk + c] != 0.0) out[r * k + c] = 1.0;
  }
  return out;
}

std::size_t expansion_count(const Tensor& binary_mask, std::size_t reserve) {
  const std::size_t d = binary_mask.shape()[0], k = binary_mask.shape()[1];
  // C_j = C_{j+1} * prod_d 1[B_{d,j} = 0], C_{K+1} = 1
  std::size_t trailing_empty = 0;
  for (std::size_t j = k; j-- > 0;) {
    bool empty = true;
    for (std::size_t r = 0; r < d && empty; ++r)
      if (binary_mask[r * k + j] != 0.0) empty = false;
    if (!empty) break;
    ++trailing_empty;
  }
  return reserve > trailing_empty ? reserve - trailing_empty : 0;
}

std::size_t expand(IbpLayerPosterior& layer, const Tensor& binary_mask,
                   std::size_t reserve, double sigma0, RngStream& rng) {
  const std::size_t g = expansion_count(binary_mask, reserve);
  layer.grow_columns(g, sigma0, rng);
  return g;
}

// ---- graph construction -------------------------------------------------

NodeId Binder::bind(Param& p, LrGroup group, Tensor update_mask) {
  NodeId id = g_.leaf(p.value, true);
  entries_.push_back({id, &p, group, std::move(update_mask)});
  return id;
}

LayerBind bind_layer(Binder& b, IbpLayerPosterior& layer,
                     const LayerBindOptions& opt) {
  LayerBind lb;
  Tensor wmask, bmask;
  if (opt.gauss_update_mask) {
    wmask = *opt.gauss_update_mask;
    // bias entries follow the column union of the weight mask
    const std::size_t d = wmask.shape()[0], k = wmask.shape()[1];
    bmask = Tensor({1, k});
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t r = 0; r < d; ++r)
        if (wmask[r * k + c] != 0.0) { bmask[c] = 1.0; break; }
  }
  if (opt.train_gauss) {
    lb.mu = b.bind(layer.weights.mu, LrGroup::Std, wmask);
    lb.raw_sigma = b.bind(layer.weights.raw_sigma, LrGroup::Std, wmask);
    lb.b_mu = b.bind(layer.bias.mu, LrGroup::Std, bmask);
    lb.b_raw_sigma = b.bind(layer.bias.raw_sigma, LrGroup::Std, bmask);
  } else {
    lb.mu = b.constant(layer.weights.mu);
    lb.raw_sigma = b.constant(layer.weights.raw_sigma);
    lb.b_mu = b.constant(layer.bias.mu);
    lb.b_raw_sigma = b.constant(layer.bias.raw_sigma);
  }
  if (opt.train_ibp) {
    lb.rho = b.bind(layer.mask_logits, LrGroup::Ibp);
    lb.raw_a = b.bind(layer.sticks.raw_a, LrGroup::Ibp);
    lb.raw_b = b.bind(layer.sticks.raw_b, LrGroup::Ibp);
  } else {
    lb.rho = b.constant(layer.mask_logits);
    lb.raw_a = b.constant(layer.sticks.raw_a);
    lb.raw_b = b.constant(layer.sticks.raw_b);
  }
  return lb;
}

LayerForward layer_forward_stochastic(Binder& b, NodeId x, const LayerBind& lb,
                                      const IbpLayerPosterior& layer,
                                      double lambda, RngStream& noise) {
  Graph& g = b.graph();
  const std::size_t d = layer.input_dim, k = layer.width;
  const std::size_t n = g.val(x).shape()[0];
  if (g.val(x).shape()[1] != d)
    throw ShapeError("layer_forward: input width " +
                     std::to_string(g.val(x).shape()[1]) + " vs D " +
                     std::to_string(d));

  // noise draw order is part of the determinism contract:
  // sticks, mask, weights, bias
  Tensor u_sticks = noise.uniform_open_tensor({k});
  Tensor u_mask = noise.uniform_open_tensor({d, k});
  Tensor eps_w = noise.normal_tensor({d, k});
  Tensor eps_b = noise.normal_tensor({1, k});

  NodeId nu = dist::kumaraswamy_sample(g, lb.raw_a, lb.raw_b, u_sticks);
  NodeId pi = g.clamp(g.exp(g.cumsum(g.log(nu))), 1e-12, 1.0 - 1e-12);
  NodeId logit_pi =
      g.sub(g.log(pi), g.log(g.clamp(g.sub(g.constant(1.0), pi), 1e-12, 1.0)));
  NodeId prior_logits = g.tile_rows(logit_pi, d);
  NodeId theta_logits = g.add(lb.rho, prior_logits);

  auto cs = dist::concrete_sample(g, theta_logits, lambda, u_mask);
  NodeId kl_mask = dist::concrete_kl_mc(g, cs.y, theta_logits, prior_logits, lambda);

  NodeId v = dist::gaussian_sample(g, lb.mu, lb.raw_sigma, eps_w);
  NodeId w = g.mul(cs.soft, v);
  NodeId bias = dist::gaussian_sample(g, lb.b_mu, lb.b_raw_sigma, eps_b);
  NodeId bias_scaled = g.mul(bias, g.colmax(cs.soft));
  NodeId act = g.add(g.matmul(x, w), g.tile_rows(bias_scaled, n));
  return {act, kl_mask, theta_logits};
}

LayerForward layer_forward_frozen(Binder& b, NodeId x, const LayerBind& lb,
                                  const IbpLayerPosterior& layer,
                                  const Tensor& binary_mask, RngStream* noise) {
  Graph& g = b.graph();
  const std::size_t d = layer.input_dim, k = layer.width;
  const std::size_t n = g.val(x).shape()[0];
  Tensor mask = pad_mask(binary_mask, d, k);

  NodeId v, bias;
  if (noise) {
    Tensor eps_w = noise->normal_tensor({d, k});
    Tensor eps_b = noise->normal_tensor({1, k});
    v = dist::gaussian_sample(g, lb.mu, lb.raw_sigma, eps_w);
    bias = dist::gaussian_sample(g, lb.b_mu, lb.b_raw_sigma, eps_b);
  } else {
    v = lb.mu;
    bias = lb.b_mu;
  }
  Tensor colmax_b({1, k});
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t r = 0; r < d; ++r)
      if (mask[r * k + c] != 0.0) { colmax_b[c] = 1.0; break; }

  NodeId w = g.mul(g.constant(mask), v);
  NodeId bias_scaled = g.mul(bias, g.constant(colmax_b));
  NodeId act = g.add(g.matmul(x, w), g.tile_rows(bias_scaled, n));
  return {act, -1, -1};
}

LayerForward layer_forward_dense(Binder& b, NodeId x, const LayerBind& lb,
                                 const IbpLayerPosterior& layer,
                                 RngStream* noise) {
  Graph& g = b.graph();
  const std::size_t d = layer.input_dim, k = layer.width;
  const std::size_t n = g.val(x).shape()[0];
  NodeId v, bias;
  if (noise) {
    Tensor eps_w = noise->normal_tensor({d, k});
    Tensor eps_b = noise->normal_tensor({1, k});
    v = dist::gaussian_sample(g, lb.mu, lb.raw_sigma, eps_w);
    bias = dist::gaussian_sample(g, lb.b_mu, lb.b_raw_sigma, eps_b);
  } else {
    v = lb.mu;
    bias = lb.b_mu;
  }
  NodeId act = g.add(g.matmul(x, v), g.tile_rows(bias, n));
  return {act, -1, -1};
}

}  // namespace cle
