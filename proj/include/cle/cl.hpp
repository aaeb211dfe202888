#pragma once

#include <string>
#include <vector>

#include "cle/config.hpp"
#include "cle/data.hpp"
#include "cle/net.hpp"

namespace cle {

struct Coreset {
  std::vector<Tensor> inputs;            // one N_i x D block per task
  std::vector<std::vector<int>> labels;

  bool empty() const {
    for (const auto& t : inputs)
      if (t.size() > 0) return false;
    return true;
  }
};

// (selected, remainder) index sets. method: "random" | "k-center".
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> coreset_select(
    const Tensor& inputs, std::size_t size, const std::string& method,
    RngStream& rng);

// Eq.-11 style merge: where the union mask is 1 the new prior is the current
// posterior, elsewhere p_0 = N(0, sigma0^2). Bias entries follow the
// column-wise union of the mask.
LayerPrior masked_prior_from_posterior(const IbpLayerPosterior& layer,
                                       const Tensor& union_mask, double sigma0);
// Plain posterior-as-prior (VCL recursion; shared VAE output layer).
LayerPrior prior_from_dense(const DenseGaussian& d);

struct Metrics {
  double acc = 0.0, fwt = 0.0, bwt = 0.0;
  bool has_fwt = false;
};

// R[i] holds accuracies for tasks 0..i (row i = after training task i).
Metrics compute_metrics(const std::vector<std::vector<double>>& r);

struct StructureRow {
  std::size_t layer, task_a, task_b;
  double sharing, filled;
};

std::vector<StructureRow> structure_report(
    const std::vector<TaskMaskSet>& masks);

struct TrainerState {
  ExperimentConfig cfg;
  RunMode mode = RunMode::Npbcl;
  SupervisedModel sup;
  VaeModel vae;
  PriorStore priors;
  std::vector<TaskMaskSet> masks;  // per trained task, immutable once stored
  Coreset coreset;
  std::vector<std::vector<double>> R;
  std::size_t next_task = 0;
};

class Trainer {
 public:
  explicit Trainer(ExperimentConfig cfg);
  // Resume from a loaded checkpoint; the stream is rebuilt from the config.
  explicit Trainer(TrainerState loaded);

  // Runs Algorithm-1 for one task and appends the R row.
  void train_task(std::size_t t);
  std::size_t task_count() const { return stream_.tasks.size(); }

  double eval_task(std::size_t eval, const SupervisedModel& model,
                   std::size_t after) const;
  double eval_vae_task(std::size_t eval, std::size_t after) const;

  // Clone trained on coreset data; used only for R-row evaluation.
  SupervisedModel coreset_predict_pass() const;

  TrainerState state;
  const TaskStream& stream() const { return stream_; }

 private:
  void train_supervised(std::size_t t);
  void train_vae(std::size_t t);
  void run_phase_supervised(std::size_t t, Phase phase, const Tensor& x,
                            const std::vector<int>& y, int epochs,
                            SupervisedModel& model, const TaskMaskSet* frozen,
                            const TaskMaskSet* update, double lr_gauss,
                            int phase_id);
  void run_phase_vae(std::size_t t, Phase phase, const Tensor& x, int epochs,
                     const TaskMaskSet* frozen, const TaskMaskSet* update,
                     double lr_gauss, int phase_id);
  void maybe_expand(std::size_t t, RngStream& rng);
  void update_priors();
  void update_alpha();
  TaskMaskSet padded_mask(std::size_t task) const;  // padded to current widths

  TaskStream stream_;
};

}  // namespace cle
