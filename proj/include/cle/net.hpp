#pragma once

#include <optional>
#include <vector>

#include "cle/ibp.hpp"

namespace cle {

enum class RunMode { Npbcl, Vcl, Naive };
enum class Phase { MlInit, Masked, Finetune };

// Plain Gaussian-posterior affine layer (task heads, VAE output layer).
struct DenseGaussian {
  std::size_t in = 0, out = 0;
  GaussianParams w;  // in x out
  GaussianParams b;  // 1 x out

  static DenseGaussian init(std::size_t in, std::size_t out, double sigma0,
                            RngStream& rng);
  void grow_rows(std::size_t g, double sigma0);  // fresh zero-mean input rows
};

struct LayerPrior {
  Tensor w_mean, w_var;
  Tensor b_mean, b_var;

  static LayerPrior p0(std::size_t d, std::size_t k, double sigma0);
  void pad_to(std::size_t d, std::size_t k, double sigma0);
};

// Per-weight Gaussian priors for everything that persists across tasks.
// Heads are per-task and always start from p0, so they are not stored here.
struct PriorStore {
  double sigma0 = 0.6;
  std::vector<LayerPrior> trunk;    // supervised trunk, or VAE encoder
  std::vector<LayerPrior> decoder;  // VAE only
  std::optional<LayerPrior> out;    // VAE shared output layer
};

// Per-task hardened masks, one binary D x K matrix per IBP layer.
struct TaskMaskSet {
  std::vector<Tensor> trunk;  // supervised trunk, or VAE encoder
  std::vector<Tensor> dec;    // VAE decoder
};

struct ElboSpec {
  RunMode mode = RunMode::Npbcl;
  Phase phase = Phase::Masked;
  int samples = 10;
  double lambda = 1.0;
  double data_scale = 1.0;  // N / batch
  const TaskMaskSet* frozen_masks = nullptr;  // Finetune / coreset phases
  const PriorStore* priors = nullptr;
  RngStream* noise = nullptr;
  // Restrict Gaussian weight updates to these per-layer masks (coreset pass).
  const TaskMaskSet* update_masks = nullptr;
};

class SupervisedModel {
 public:
  std::vector<IbpLayerPosterior> trunk;
  std::vector<DenseGaussian> heads;
  std::vector<std::size_t> head_classes;

  static SupervisedModel init(std::size_t input_dim,
                              const std::vector<std::size_t>& hidden,
                              double alpha, double sigma0, RngStream& rng);
  void ensure_head(std::size_t task, std::size_t classes, double sigma0,
                   RngStream& rng);
  std::size_t last_width() const { return trunk.back().width; }
};

// Builds the negative ELBO for one minibatch; parameters are bound through
// `binder` so the caller can route gradients after backward().
NodeId build_supervised_elbo(Binder& binder, SupervisedModel& model,
                             const Tensor& x, const std::vector<int>& y,
                             std::size_t task, const ElboSpec& spec);

// Class probabilities (rows sum to 1) averaged over weight samples.
Tensor supervised_predict(const SupervisedModel& model, const Tensor& x,
                          std::size_t task, const TaskMaskSet* masks,
                          int samples, RunMode mode, RngStream* noise);

class VaeModel {
 public:
  std::size_t data_dim = 0, latent_dim = 0;
  std::vector<IbpLayerPosterior> encoder;
  std::vector<IbpLayerPosterior> decoder;
  DenseGaussian out;                          // shared pixel-logit layer
  std::vector<DenseGaussian> z_mean_heads;    // per task
  std::vector<DenseGaussian> z_raw_sigma_heads;

  static VaeModel init(std::size_t data_dim,
                       const std::vector<std::size_t>& enc_hidden,
                       std::size_t latent, double alpha, double sigma0,
                       RngStream& rng);
  void ensure_heads(std::size_t task, double sigma0, RngStream& rng);
};

NodeId build_vae_elbo(Binder& binder, VaeModel& model, const Tensor& x,
                      std::size_t task, const ElboSpec& spec);

// Per-datapoint data bound: mean over the batch of
// E_q(z)[log p(x|z)] - KL(q(z)||N(0,I)) estimated with `samples` draws
// under the task's frozen mask.
double vae_eval_elbo(const VaeModel& model, const Tensor& x, std::size_t task,
                     const TaskMaskSet& masks, int samples, RngStream& noise,
                     RunMode mode);

// Decodes z ~ N(0,I) under the task's frozen mask; returns sigmoid means.
Tensor vae_generate(const VaeModel& model, std::size_t task,
                    const TaskMaskSet& masks, std::size_t n, RngStream& rng,
                    RunMode mode);

}  // namespace cle
