#pragma once

#include "cle/graph.hpp"
#include "cle/rng.hpp"

namespace cle::dist {

// Clamp applied to uniform noise before log/logit transforms.
constexpr double kNoiseEps = 1e-8;

// Location-scale sample mu + softplus(raw_sigma) * eps.
NodeId gaussian_sample(Graph& g, NodeId mu, NodeId raw_sigma, const Tensor& eps);

// Closed-form KL( N(mu, softplus(raw)^2) || N(p_mean, p_var) ), summed.
NodeId gaussian_kl(Graph& g, NodeId mu, NodeId raw_sigma,
                   const Tensor& p_mean, const Tensor& p_var);

// Non-graph evaluation of the same formula (prior bookkeeping, oracles).
double gaussian_kl_value(double mu_q, double sigma_q, double mu_p, double var_p);

// Inverse-CDF sample of Kumaraswamy(softplus(raw_a), softplus(raw_b)):
// nu = (1 - u^{1/b})^{1/a}, computed in log space, clamped into (0,1).
NodeId kumaraswamy_sample(Graph& g, NodeId raw_a, NodeId raw_b, const Tensor& u);

// KL( Kumaraswamy(a,b) || Beta(alpha,beta) ) with the infinite series
// truncated at 11 terms, summed over the vector.
NodeId kumaraswamy_beta_kl(Graph& g, NodeId raw_a, NodeId raw_b,
                           double prior_alpha, double prior_beta);
double kumaraswamy_beta_kl_value(double a, double b, double alpha, double beta);

struct ConcreteSample {
  NodeId y;     // pre-sigmoid variable
  NodeId soft;  // sigmoid(y), in (0,1)
};

// Binary Concrete: Y = (logits + logit(u)) / lambda, soft mask = sigmoid(Y).
ConcreteSample concrete_sample(Graph& g, NodeId logits, double lambda,
                               const Tensor& u);

// Elementwise log density of the pre-sigmoid Concrete variable.
NodeId concrete_log_density(Graph& g, NodeId y, NodeId logits, double lambda);

// Single-sample MC estimate of KL(q||p) for relaxed Bernoulli masks:
// sum of log q(Y) - log p(Y) for Y drawn from q.
NodeId concrete_kl_mc(Graph& g, NodeId y, NodeId q_logits, NodeId p_logits,
                      double lambda);

}  // namespace cle::dist
