#include "cle/dist.hpp"

#include <cmath>

#include "cle/special.hpp"

namespace cle::dist {

NodeId gaussian_sample(Graph& g, NodeId mu, NodeId raw_sigma, const Tensor& eps) {
  if (!g.val(mu).same_shape(eps))
    throw ShapeError("gaussian_sample: eps shape " +
                     Tensor::shape_str(eps.shape()) + " vs mu " +
                     Tensor::shape_str(g.val(mu).shape()));
  NodeId sigma = g.softplus(raw_sigma);
  return g.add(mu, g.mul(sigma, g.constant(eps)));
}

NodeId gaussian_kl(Graph& g, NodeId mu, NodeId raw_sigma,
                   const Tensor& p_mean, const Tensor& p_var) {
  Tensor half_log_pvar(p_var.shape());
  Tensor inv_2pvar(p_var.shape());
  for (std::size_t i = 0; i < p_var.size(); ++i) {
    if (!(p_var[i] > 0.0))
      throw NumericError("gaussian_kl: non-positive prior variance");
    half_log_pvar[i] = 0.5 * std::log(p_var[i]);
    inv_2pvar[i] = 0.5 / p_var[i];
  }
  NodeId sigma = g.softplus(raw_sigma);
  NodeId diff = g.sub(mu, g.constant(p_mean));
  NodeId num = g.add(g.mul(sigma, sigma), g.mul(diff, diff));
  NodeId per = g.add(g.sub(g.constant(half_log_pvar), g.log(sigma)),
                     g.sub(g.mul(num, g.constant(inv_2pvar)), g.constant(0.5)));
  return g.sum(per);
}

double gaussian_kl_value(double mu_q, double sigma_q, double mu_p, double var_p) {
  const double d = mu_q - mu_p;
  return 0.5 * std::log(var_p) - std::log(sigma_q) +
         (sigma_q * sigma_q + d * d) / (2.0 * var_p) - 0.5;
}

NodeId kumaraswamy_sample(Graph& g, NodeId raw_a, NodeId raw_b, const Tensor& u) {
  Tensor log_u(u.shape());
  for (std::size_t i = 0; i < u.size(); ++i) {
    double ui = std::min(1.0 - kNoiseEps, std::max(kNoiseEps, u[i]));
    log_u[i] = std::log(ui);
  }
  NodeId a = g.softplus(raw_a);
  NodeId b = g.softplus(raw_b);
  // u^{1/b} = exp(log u / b)
  NodeId t = g.exp(g.div(g.constant(log_u), b));
  NodeId s = g.clamp(g.sub(g.constant(1.0), t), 1e-12, 1.0);
  NodeId nu = g.exp(g.div(g.log(s), a));
  return g.clamp(nu, 1e-12, 1.0 - 1e-12);
}

NodeId kumaraswamy_beta_kl(Graph& g, NodeId raw_a, NodeId raw_b,
                           double prior_alpha, double prior_beta) {
  if (!(prior_alpha > 0.0) || !(prior_beta > 0.0))
    throw NumericError("kumaraswamy_beta_kl: non-positive prior parameters");
  NodeId a = g.softplus(raw_a);
  NodeId b = g.softplus(raw_b);
  NodeId one = g.constant(1.0);

  // (a - alpha)/a * (-euler - digamma(b) - 1/b)
  NodeId t1 = g.mul(g.div(g.sub(a, g.constant(prior_alpha)), a),
                    g.sub(g.neg(g.digamma(b)),
                          g.add(g.constant(kEulerGamma), g.div(one, b))));
  // log(a b) + log B(alpha, beta)
  NodeId t2 = g.add(g.add(g.log(a), g.log(b)),
                    g.constant(log_beta(prior_alpha, prior_beta)));
  // -(b - 1)/b
  NodeId t3 = g.neg(g.div(g.sub(b, one), b));
  NodeId kl = g.add(g.add(t1, t2), t3);

  if (prior_beta != 1.0) {
    // (beta - 1) b  sum_{m=1}^{11} B(m/a, b) / (m + a b)
    NodeId lg_b = g.lgamma(b);
    NodeId ab = g.mul(a, b);
    NodeId series = g.constant(0.0);
    for (int m = 1; m <= 11; ++m) {
      NodeId ma = g.div(g.constant(static_cast<double>(m)), a);
      NodeId log_bfun = g.sub(g.add(g.lgamma(ma), lg_b), g.lgamma(g.add(ma, b)));
      NodeId term = g.div(g.exp(log_bfun),
                          g.add(g.constant(static_cast<double>(m)), ab));
      series = g.add(series, term);
    }
    kl = g.add(kl, g.mul(g.constant(prior_beta - 1.0), g.mul(b, series)));
  }
  return g.sum(kl);
}

double kumaraswamy_beta_kl_value(double a, double b, double alpha, double beta) {
  double kl = (a - alpha) / a * (-kEulerGamma - digamma(b) - 1.0 / b) +
              std::log(a * b) + log_beta(alpha, beta) - (b - 1.0) / b;
  if (beta != 1.0) {
    double series = 0.0;
    for (int m = 1; m <= 11; ++m)
      series += std::exp(log_beta(m / a, b)) / (m + a * b);
    kl += (beta - 1.0) * b * series;
  }
  return kl;
}

ConcreteSample concrete_sample(Graph& g, NodeId logits, double lambda,
                               const Tensor& u) {
  if (!(lambda > 0.0))
    throw NumericError("concrete_sample: temperature must be positive");
  Tensor logit_u(u.shape());
  for (std::size_t i = 0; i < u.size(); ++i) {
    double ui = std::min(1.0 - kNoiseEps, std::max(kNoiseEps, u[i]));
    logit_u[i] = std::log(ui) - std::log1p(-ui);
  }
  NodeId y = g.mul(g.add(logits, g.constant(logit_u)), g.constant(1.0 / lambda));
  return {y, g.sigmoid(y)};
}

NodeId concrete_log_density(Graph& g, NodeId y, NodeId logits, double lambda) {
  NodeId ly = g.mul(y, g.constant(lambda));
  NodeId inner = g.sub(logits, ly);
  NodeId two_sp = g.mul(g.constant(2.0), g.softplus(inner));
  return g.sub(g.add(g.sub(g.constant(std::log(lambda)), ly), logits), two_sp);
}

NodeId concrete_kl_mc(Graph& g, NodeId y, NodeId q_logits, NodeId p_logits,
                      double lambda) {
  NodeId lq = concrete_log_density(g, y, q_logits, lambda);
  NodeId lp = concrete_log_density(g, y, p_logits, lambda);
  return g.sum(g.sub(lq, lp));
}

}  // namespace cle::dist
