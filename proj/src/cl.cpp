#include "cle/cl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cle/special.hpp"

namespace cle {

namespace {

constexpr int kPhaseMlInit = 0;
constexpr int kPhaseMasked = 1;
constexpr int kPhaseFinetune = 2;
constexpr int kPhaseCoreset = 3;

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
  const std::size_t d = x.shape()[1];
  Tensor out({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x[idx[i] * d + j];
  return out;
}

std::vector<int> gather_labels(const std::vector<int>& y,
                               const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(y[i]);
  return out;
}

double geometric_lambda(double start, double lo, int epoch, int epochs) {
  if (epochs <= 1) return lo;
  const double t = double(epoch) / double(epochs - 1);
  return start * std::pow(lo / start, t);
}

// Per-layer complement of the union of stored masks, padded to the current
// layer shapes: the capacity no earlier task depends on.
std::vector<Tensor> free_capacity(const std::vector<IbpLayerPosterior>& layers,
                                  const std::vector<TaskMaskSet>& masks,
                                  bool decoder_part) {
  std::vector<Tensor> out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    std::vector<Tensor> stored;
    for (const auto& m : masks) {
      const auto& vec = decoder_part ? m.dec : m.trunk;
      if (l < vec.size()) stored.push_back(vec[l]);
    }
    Tensor comp({layers[l].input_dim, layers[l].width});
    if (stored.empty()) {
      for (std::size_t i = 0; i < comp.size(); ++i) comp[i] = 1.0;
    } else {
      const Tensor u =
          pad_mask(union_masks(stored), layers[l].input_dim, layers[l].width);
      for (std::size_t i = 0; i < comp.size(); ++i) comp[i] = 1.0 - u[i];
    }
    out.push_back(std::move(comp));
  }
  return out;
}

}  // namespace

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> coreset_select(
    const Tensor& inputs, std::size_t size, const std::string& method,
    RngStream& rng) {
  const std::size_t n = inputs.shape()[0];
  if (size > n)
    throw std::runtime_error("coreset: size " + std::to_string(size) +
                             " exceeds task size " + std::to_string(n));
  std::vector<std::size_t> sel;
  if (size > 0 && method == "random") {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    rng.shuffle(all);
    sel.assign(all.begin(), all.begin() + size);
    std::sort(sel.begin(), sel.end());
  } else if (size > 0 && method == "k-center") {
    const std::size_t d = inputs.shape()[1];
    std::vector<double> dist(n, std::numeric_limits<double>::infinity());
    std::size_t pick = rng.integer(n);
    for (std::size_t s = 0; s < size; ++s) {
      sel.push_back(pick);
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double diff = inputs[i * d + j] - inputs[pick * d + j];
          acc += diff * diff;
        }
        dist[i] = std::min(dist[i], acc);
      }
      pick = 0;
      for (std::size_t i = 1; i < n; ++i)
        if (dist[i] > dist[pick]) pick = i;
    }
    std::sort(sel.begin(), sel.end());
  } else if (size > 0) {
    throw std::runtime_error("coreset: unknown method '" + method + "'");
  }
  std::vector<bool> taken(n, false);
  for (std::size_t i : sel) taken[i] = true;
  std::vector<std::size_t> rem;
  for (std::size_t i = 0; i < n; ++i)
    if (!taken[i]) rem.push_back(i);
  return {sel, rem};
}

LayerPrior masked_prior_from_posterior(const IbpLayerPosterior& layer,
                                       const Tensor& union_mask,
                                       double sigma0) {
  const std::size_t d = layer.input_dim, k = layer.width;
  if (union_mask.shape() != std::vector<std::size_t>{d, k})
    throw ShapeError("masked prior: mask shape mismatch");
  LayerPrior p;
  p.w_mean = Tensor({d, k});
  p.w_var = Tensor({d, k});
  const double var0 = sigma0 * sigma0;
  for (std::size_t i = 0; i < d * k; ++i) {
    if (union_mask[i] != 0.0) {
      p.w_mean[i] = layer.weights.mu.value[i];
      const double s = softplus_s(layer.weights.raw_sigma.value[i]);
      p.w_var[i] = s * s;
    } else {
      p.w_mean[i] = 0.0;
      p.w_var[i] = var0;
    }
  }
  p.b_mean = Tensor({1, k});
  p.b_var = Tensor({1, k});
  for (std::size_t c = 0; c < k; ++c) {
    bool active = false;
    for (std::size_t r = 0; r < d; ++r)
      if (union_mask[r * k + c] != 0.0) active = true;
    if (active) {
      p.b_mean[c] = layer.bias.mu.value[c];
      const double s = softplus_s(layer.bias.raw_sigma.value[c]);
      p.b_var[c] = s * s;
    } else {
      p.b_mean[c] = 0.0;
      p.b_var[c] = var0;
    }
  }
  return p;
}

LayerPrior prior_from_dense(const DenseGaussian& d) {
  LayerPrior p;
  p.w_mean = d.w.mu.value;
  p.w_var = Tensor({d.in, d.out});
  for (std::size_t i = 0; i < p.w_var.size(); ++i) {
    const double s = softplus_s(d.w.raw_sigma.value[i]);
    p.w_var[i] = s * s;
  }
  p.b_mean = d.b.mu.value;
  p.b_var = Tensor({1, d.out});
  for (std::size_t i = 0; i < p.b_var.size(); ++i) {
    const double s = softplus_s(d.b.raw_sigma.value[i]);
    p.b_var[i] = s * s;
  }
  return p;
}

Metrics compute_metrics(const std::vector<std::vector<double>>& r) {
  const std::size_t n = r.size();
  if (n == 0) throw std::runtime_error("metrics: empty R");
  for (std::size_t i = 0; i < n; ++i)
    if (r[i].size() < i + 1)
      throw std::runtime_error("metrics: row " + std::to_string(i) +
                               " missing entries");
  Metrics m;
  double acc = 0.0;
  std::size_t acc_n = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      acc += r[i][j];
      ++acc_n;
    }
  m.acc = acc / double(acc_n);
  if (n > 1) {
    double bwt = 0.0;
    for (std::size_t i = 1; i < n; ++i)
      for (std::size_t j = 0; j < i; ++j) bwt += r[i][j] - r[j][j];
    m.bwt = bwt / (double(n) * double(n - 1) / 2.0);
    // FWT needs R[i][j] for j > i, which is only populated when requested.
    bool upper = true;
    for (std::size_t i = 0; i + 1 < n; ++i)
      if (r[i].size() < n) upper = false;
    if (upper) {
      double fwt = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) fwt += r[i][j];
      m.fwt = fwt / (double(n) * double(n - 1) / 2.0);
      m.has_fwt = true;
    }
  }
  return m;
}

std::vector<StructureRow> structure_report(
    const std::vector<TaskMaskSet>& masks) {
  std::vector<StructureRow> rows;
  if (masks.empty()) return rows;
  const std::size_t layers = masks[0].trunk.size();
  for (std::size_t l = 0; l < layers; ++l) {
    // filled(k) over the prefix unions
    std::vector<double> filled(masks.size());
    for (std::size_t k = 0; k < masks.size(); ++k) {
      std::vector<Tensor> prefix;
      for (std::size_t i = 0; i <= k; ++i) prefix.push_back(masks[i].trunk[l]);
      Tensor u = union_masks(prefix);
      double s = 0.0;
      for (std::size_t i = 0; i < u.size(); ++i) s += u[i];
      filled[k] = s / double(u.size());
    }
    for (std::size_t a = 0; a < masks.size(); ++a)
      for (std::size_t b = a; b < masks.size(); ++b) {
        Tensor u = union_masks({masks[a].trunk[l], masks[b].trunk[l]});
        const Tensor pa = pad_mask(masks[a].trunk[l], u.shape()[0], u.shape()[1]);
        const Tensor pb = pad_mask(masks[b].trunk[l], u.shape()[0], u.shape()[1]);
        double inter = 0.0, uni = 0.0;
        for (std::size_t i = 0; i < u.size(); ++i) {
          inter += (pa[i] != 0.0 && pb[i] != 0.0) ? 1.0 : 0.0;
          uni += u[i];
        }
        rows.push_back({l, a, b, uni > 0.0 ? inter / uni : 1.0, filled[b]});
      }
  }
  return rows;
}

Trainer::Trainer(ExperimentConfig cfg) {
  state.cfg = std::move(cfg);
  state.mode = state.cfg.mode == "npbcl"  ? RunMode::Npbcl
               : state.cfg.mode == "vcl"  ? RunMode::Vcl
                                          : RunMode::Naive;
  stream_ = build_stream(state.cfg);
  const auto& c = state.cfg;
  RngStream init(c.seed, "init");
  const std::size_t input_dim = stream_.tasks[0].train.dim();
  state.priors.sigma0 = c.hyper.sigma0;
  if (c.problem == "supervised") {
    state.sup = SupervisedModel::init(input_dim, c.arch.hidden, c.hyper.alpha,
                                      c.hyper.sigma0, init);
    std::size_t d = input_dim;
    for (std::size_t k : c.arch.hidden) {
      state.priors.trunk.push_back(LayerPrior::p0(d, k, c.hyper.sigma0));
      d = k;
    }
  } else {
    state.vae = VaeModel::init(input_dim, c.arch.vae_hidden, c.arch.latent,
                               c.hyper.alpha, c.hyper.sigma0, init);
    std::size_t d = input_dim;
    for (std::size_t k : c.arch.vae_hidden) {
      state.priors.trunk.push_back(LayerPrior::p0(d, k, c.hyper.sigma0));
      d = k;
    }
    for (const auto& layer : state.vae.decoder)
      state.priors.decoder.push_back(
          LayerPrior::p0(layer.input_dim, layer.width, c.hyper.sigma0));
    state.priors.out =
        LayerPrior::p0(state.vae.out.in, state.vae.out.out, c.hyper.sigma0);
  }
}

Trainer::Trainer(TrainerState loaded) {
  state = std::move(loaded);
  stream_ = build_stream(state.cfg);
}

TaskMaskSet Trainer::padded_mask(std::size_t task) const {
  TaskMaskSet out;
  if (task >= state.masks.size()) return out;
  const TaskMaskSet& m = state.masks[task];
  if (state.cfg.problem == "supervised") {
    for (std::size_t l = 0; l < m.trunk.size(); ++l)
      out.trunk.push_back(pad_mask(m.trunk[l], state.sup.trunk[l].input_dim,
                                   state.sup.trunk[l].width));
  } else {
    for (std::size_t l = 0; l < m.trunk.size(); ++l)
      out.trunk.push_back(pad_mask(m.trunk[l], state.vae.encoder[l].input_dim,
                                   state.vae.encoder[l].width));
    for (std::size_t l = 0; l < m.dec.size(); ++l)
      out.dec.push_back(pad_mask(m.dec[l], state.vae.decoder[l].input_dim,
                                 state.vae.decoder[l].width));
  }
  return out;
}

void Trainer::maybe_expand(std::size_t t, RngStream& rng) {
  const auto& c = state.cfg;
  if (c.arch.expansion_reserve == 0 || state.mode != RunMode::Npbcl ||
      c.problem != "supervised")
    return;
  for (std::size_t l = 0; l < state.sup.trunk.size(); ++l) {
    IbpLayerPosterior& layer = state.sup.trunk[l];
    const Tensor mask = harden(eval_theta(layer));
    const std::size_t g =
        expand(layer, mask, c.arch.expansion_reserve, c.hyper.sigma0, rng);
    if (g == 0) continue;
    if (l + 1 < state.sup.trunk.size())
      state.sup.trunk[l + 1].grow_rows(g, c.hyper.sigma0, rng);
    else
      for (auto& head : state.sup.heads) head.grow_rows(g, c.hyper.sigma0);
    state.priors.trunk[l].pad_to(layer.input_dim, layer.width, c.hyper.sigma0);
    if (l + 1 < state.priors.trunk.size())
      state.priors.trunk[l + 1].pad_to(state.sup.trunk[l + 1].input_dim,
                                       state.sup.trunk[l + 1].width,
                                       c.hyper.sigma0);
  }
  (void)t;
}

void Trainer::run_phase_supervised(std::size_t t, Phase phase, const Tensor& x,
                                   const std::vector<int>& y, int epochs,
                                   SupervisedModel& model,
                                   const TaskMaskSet* frozen,
                                   const TaskMaskSet* update, double lr_gauss,
                                   int phase_id) {
  if (epochs <= 0) return;
  const auto& c = state.cfg;
  const std::size_t n = y.size();
  const std::size_t bs = std::min<std::size_t>(c.hyper.batch, n);
  Adam adam;

  for (auto& layer : model.trunk) {
    layer.weights.mu.reset_moments();
    layer.weights.raw_sigma.reset_moments();
    layer.bias.mu.reset_moments();
    layer.bias.raw_sigma.reset_moments();
    layer.mask_logits.reset_moments();
    layer.sticks.raw_a.reset_moments();
    layer.sticks.raw_b.reset_moments();
  }
  model.heads[t].w.mu.reset_moments();
  model.heads[t].w.raw_sigma.reset_moments();
  model.heads[t].b.mu.reset_moments();
  model.heads[t].b.raw_sigma.reset_moments();

  const bool expanding = phase == Phase::Masked && &model == &state.sup;
  for (int e = 0; e < epochs; ++e) {
    RngStream order(c.seed, "data-order", t * 16 + phase_id, e);
    RngStream noise(c.seed, "noise", t * 16 + phase_id, e);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    order.shuffle(idx);

    for (std::size_t off = 0; off < n; off += bs) {
      const std::size_t m = std::min(bs, n - off);
      std::vector<std::size_t> batch(idx.begin() + off, idx.begin() + off + m);
      Tensor bx = gather_rows(x, batch);
      std::vector<int> by = gather_labels(y, batch);

      Graph g;
      Binder b(g);
      ElboSpec spec;
      spec.mode = state.mode;
      spec.phase = phase;
      spec.samples = state.mode == RunMode::Naive ? 1 : c.hyper.s_train;
      spec.lambda = geometric_lambda(c.hyper.lambda_start, c.hyper.lambda_min,
                                     e, epochs);
      spec.data_scale = double(n) / double(m);
      spec.frozen_masks = frozen;
      spec.priors = &state.priors;
      spec.noise = &noise;
      spec.update_masks = update;
      NodeId loss = build_supervised_elbo(b, model, bx, by, t, spec);
      g.backward(loss);

      for (auto& entry : b.entries()) {
        if (!g.has_grad(entry.node)) continue;
        const double lr =
            entry.group == LrGroup::Ibp ? c.hyper.lr_ibp : lr_gauss;
        adam.step(*entry.param, g.grad(entry.node), lr,
                  entry.update_mask.size() ? &entry.update_mask : nullptr);
      }
    }
    if (expanding) {
      RngStream grow(c.seed, "expand", t, static_cast<std::uint64_t>(e));
      maybe_expand(t, grow);
    }
  }
}

void Trainer::train_supervised(std::size_t t) {
  const auto& c = state.cfg;
  const Task& task = stream_.tasks[t];
  if (task.train.size() == 0)
    throw std::runtime_error("train_task: task " + std::to_string(t) +
                             " has no training data");
  RngStream init(c.seed, "init", t + 1);
  state.sup.ensure_head(t, task.head_classes, c.hyper.sigma0, init);

  // coreset split first; coreset examples never join the training stream
  state.coreset.inputs.resize(t + 1);
  state.coreset.labels.resize(t + 1);
  Tensor train_x = task.train.inputs;
  std::vector<int> train_y = task.train.labels;
  if (c.hyper.coreset_size > 0 && state.mode != RunMode::Naive) {
    RngStream crng(c.seed, "coreset", t);
    auto [sel, rem] = coreset_select(task.train.inputs, c.hyper.coreset_size,
                                     c.hyper.coreset_method, crng);
    state.coreset.inputs[t] = gather_rows(task.train.inputs, sel);
    state.coreset.labels[t] = gather_labels(task.train.labels, sel);
    train_x = gather_rows(task.train.inputs, rem);
    train_y = gather_labels(task.train.labels, rem);
  }

  // Deterministic warm start at the posterior means.  For later tasks it is
  // restricted to capacity outside the union of stored masks, so weights an
  // earlier task relies on are untouched.
  const bool warm = c.hyper.ml_init_epochs > 0 && state.mode != RunMode::Naive &&
                    (t == 0 || state.mode == RunMode::Npbcl);
  if (warm) {
    TaskMaskSet freecap;
    const TaskMaskSet* update = nullptr;
    if (t > 0) {
      freecap.trunk = free_capacity(state.sup.trunk, state.masks, false);
      update = &freecap;
    }
    run_phase_supervised(t, Phase::MlInit, train_x, train_y,
                         c.hyper.ml_init_epochs, state.sup, nullptr, update,
                         c.hyper.lr_ml, kPhaseMlInit);
  }

  run_phase_supervised(t, Phase::Masked, train_x, train_y, c.hyper.epochs,
                       state.sup, nullptr, nullptr, c.hyper.lr, kPhaseMasked);

  TaskMaskSet mask;
  if (state.mode == RunMode::Npbcl)
    for (const auto& layer : state.sup.trunk)
      mask.trunk.push_back(harden(eval_theta(layer)));
  state.masks.push_back(std::move(mask));

  if (state.mode == RunMode::Npbcl && c.hyper.finetune_epochs > 0) {
    const TaskMaskSet own = padded_mask(t);
    run_phase_supervised(t, Phase::Finetune, train_x, train_y,
                         c.hyper.finetune_epochs, state.sup, &own, &own,
                         c.hyper.lr_finetune, kPhaseFinetune);
  }

  update_priors();
  update_alpha();
}

SupervisedModel Trainer::coreset_predict_pass() const {
  SupervisedModel clone = state.sup;
  auto* self = const_cast<Trainer*>(this);
  const auto& c = state.cfg;
  for (std::size_t i = 0; i < state.masks.size(); ++i) {
    if (i >= state.coreset.inputs.size() || state.coreset.inputs[i].size() == 0)
      continue;
    if (state.mode == RunMode::Npbcl) {
      const TaskMaskSet own = padded_mask(i);
      self->run_phase_supervised(i, Phase::Finetune, state.coreset.inputs[i],
                                 state.coreset.labels[i], c.hyper.coreset_epochs,
                                 clone, &own, &own, c.hyper.lr_finetune,
                                 kPhaseCoreset);
    } else {
      self->run_phase_supervised(i, Phase::Masked, state.coreset.inputs[i],
                                 state.coreset.labels[i], c.hyper.coreset_epochs,
                                 clone, nullptr, nullptr, c.hyper.lr,
                                 kPhaseCoreset);
    }
  }
  return clone;
}

void Trainer::update_priors() {
  const auto& c = state.cfg;
  if (state.mode == RunMode::Naive) return;
  auto union_for = [&](const std::vector<IbpLayerPosterior>& layers,
                       bool decoder_part, std::size_t l) {
    if (state.mode != RunMode::Npbcl)
      return Tensor({layers[l].input_dim, layers[l].width}, 1.0);
    std::vector<Tensor> all;
    for (const auto& m : state.masks) {
      const auto& vec = decoder_part ? m.dec : m.trunk;
      if (l < vec.size()) all.push_back(vec[l]);
    }
    Tensor u = union_masks(all);
    return pad_mask(u, layers[l].input_dim, layers[l].width);
  };
  if (c.problem == "supervised") {
    for (std::size_t l = 0; l < state.sup.trunk.size(); ++l)
      state.priors.trunk[l] = masked_prior_from_posterior(
          state.sup.trunk[l], union_for(state.sup.trunk, false, l),
          c.hyper.sigma0);
  } else {
    for (std::size_t l = 0; l < state.vae.encoder.size(); ++l)
      state.priors.trunk[l] = masked_prior_from_posterior(
          state.vae.encoder[l], union_for(state.vae.encoder, false, l),
          c.hyper.sigma0);
    for (std::size_t l = 0; l < state.vae.decoder.size(); ++l)
      state.priors.decoder[l] = masked_prior_from_posterior(
          state.vae.decoder[l], union_for(state.vae.decoder, true, l),
          c.hyper.sigma0);
    state.priors.out = prior_from_dense(state.vae.out);
  }
}

void Trainer::update_alpha() {
  if (state.mode != RunMode::Npbcl) return;
  auto bump = [](IbpLayerPosterior& layer) {
    double mx = layer.alpha;
    for (std::size_t k = 0; k < layer.width; ++k)
      mx = std::max(mx, softplus_s(layer.sticks.raw_a.value[k]));
    layer.alpha = mx;
  };
  if (state.cfg.problem == "supervised")
    for (auto& layer : state.sup.trunk) bump(layer);
  else {
    for (auto& layer : state.vae.encoder) bump(layer);
    for (auto& layer : state.vae.decoder) bump(layer);
  }
}

double Trainer::eval_task(std::size_t eval, const SupervisedModel& model,
                          std::size_t after) const {
  const auto& c = state.cfg;
  const Dataset& test = stream_.tasks[eval].test;
  RngStream noise(c.seed, "eval", after * 1024 + eval);
  const TaskMaskSet mask = padded_mask(eval);
  Tensor probs = supervised_predict(
      model, test.inputs, eval,
      state.mode == RunMode::Npbcl ? &mask : nullptr, c.hyper.s_test,
      state.mode, state.mode == RunMode::Naive ? nullptr : &noise);
  const std::size_t cls = probs.shape()[1];
  std::size_t hits = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < cls; ++j)
      if (probs[i * cls + j] > probs[i * cls + best]) best = j;
    if (static_cast<int>(best) == test.labels[i]) ++hits;
  }
  return double(hits) / double(test.size());
}

double Trainer::eval_vae_task(std::size_t eval, std::size_t after) const {
  const auto& c = state.cfg;
  RngStream noise(c.seed, "eval-vae", after * 1024 + eval);
  const TaskMaskSet mask = padded_mask(eval);
  return vae_eval_elbo(state.vae, stream_.tasks[eval].test.inputs, eval, mask,
                       c.hyper.s_test, noise, state.mode);
}

void Trainer::run_phase_vae(std::size_t t, Phase phase, const Tensor& x,
                            int epochs, const TaskMaskSet* frozen,
                            const TaskMaskSet* update, double lr_gauss,
                            int phase_id) {
  if (epochs <= 0) return;
  const auto& c = state.cfg;
  const std::size_t n = x.shape()[0];
  const std::size_t bs = std::min<std::size_t>(c.hyper.batch, n);
  Adam adam;

  auto reset_layer = [](IbpLayerPosterior& layer) {
    layer.weights.mu.reset_moments();
    layer.weights.raw_sigma.reset_moments();
    layer.bias.mu.reset_moments();
    layer.bias.raw_sigma.reset_moments();
    layer.mask_logits.reset_moments();
    layer.sticks.raw_a.reset_moments();
    layer.sticks.raw_b.reset_moments();
  };
  for (auto& layer : state.vae.encoder) reset_layer(layer);
  for (auto& layer : state.vae.decoder) reset_layer(layer);
  auto reset_dense = [](DenseGaussian& d) {
    d.w.mu.reset_moments();
    d.w.raw_sigma.reset_moments();
    d.b.mu.reset_moments();
    d.b.raw_sigma.reset_moments();
  };
  reset_dense(state.vae.out);
  reset_dense(state.vae.z_mean_heads[t]);
  reset_dense(state.vae.z_raw_sigma_heads[t]);

  for (int e = 0; e < epochs; ++e) {
    RngStream order(c.seed, "data-order", t * 16 + phase_id, e);
    RngStream noise(c.seed, "noise", t * 16 + phase_id, e);
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    order.shuffle(idx);
    for (std::size_t off = 0; off < n; off += bs) {
      const std::size_t m = std::min(bs, n - off);
      std::vector<std::size_t> batch(idx.begin() + off, idx.begin() + off + m);
      Tensor bx = gather_rows(x, batch);
      Graph g;
      Binder b(g);
      ElboSpec spec;
      spec.mode = state.mode;
      spec.phase = phase;
      spec.samples = state.mode == RunMode::Naive ? 1 : c.hyper.s_train;
      spec.lambda = geometric_lambda(c.hyper.lambda_start, c.hyper.lambda_min,
                                     e, epochs);
      spec.data_scale = double(n) / double(m);
      spec.frozen_masks = frozen;
      spec.priors = &state.priors;
      spec.noise = &noise;
      spec.update_masks = update;
      NodeId loss = build_vae_elbo(b, state.vae, bx, t, spec);
      g.backward(loss);
      for (auto& entry : b.entries()) {
        if (!g.has_grad(entry.node)) continue;
        const double lr =
            entry.group == LrGroup::Ibp ? c.hyper.lr_ibp : lr_gauss;
        adam.step(*entry.param, g.grad(entry.node), lr,
                  entry.update_mask.size() ? &entry.update_mask : nullptr);
      }
    }
  }
}

void Trainer::train_vae(std::size_t t) {
  const auto& c = state.cfg;
  const Task& task = stream_.tasks[t];
  if (task.train.size() == 0)
    throw std::runtime_error("train_task: task " + std::to_string(t) +
                             " has no training data");
  RngStream init(c.seed, "init", t + 1);
  state.vae.ensure_heads(t, c.hyper.sigma0, init);
  const Tensor& x = task.train.inputs;

  // Same warm-start policy as the supervised path: deterministic training at
  // the means, restricted to capacity outside the union of stored masks.
  const bool warm = c.hyper.ml_init_epochs > 0 && state.mode != RunMode::Naive &&
                    (t == 0 || state.mode == RunMode::Npbcl);
  if (warm) {
    TaskMaskSet freecap;
    const TaskMaskSet* update = nullptr;
    if (t > 0) {
      freecap.trunk = free_capacity(state.vae.encoder, state.masks, false);
      freecap.dec = free_capacity(state.vae.decoder, state.masks, true);
      update = &freecap;
    }
    run_phase_vae(t, Phase::MlInit, x, c.hyper.ml_init_epochs, nullptr, update,
                  c.hyper.lr_ml, kPhaseMlInit);
  }
  run_phase_vae(t, Phase::Masked, x, c.hyper.epochs, nullptr, nullptr,
                c.hyper.lr, kPhaseMasked);

  TaskMaskSet mask;
  if (state.mode == RunMode::Npbcl) {
    for (const auto& layer : state.vae.encoder)
      mask.trunk.push_back(harden(eval_theta(layer)));
    for (const auto& layer : state.vae.decoder)
      mask.dec.push_back(harden(eval_theta(layer)));
  }
  state.masks.push_back(std::move(mask));

  if (state.mode == RunMode::Npbcl && c.hyper.finetune_epochs > 0) {
    const TaskMaskSet own = padded_mask(t);
    run_phase_vae(t, Phase::Finetune, x, c.hyper.finetune_epochs, &own, &own,
                  c.hyper.lr_finetune, kPhaseFinetune);
  }

  update_priors();
  update_alpha();
}

void Trainer::train_task(std::size_t t) {
  if (t >= stream_.tasks.size())
    throw std::runtime_error("train_task: task index out of range");
  if (state.cfg.problem == "supervised") {
    train_supervised(t);
    const bool replay =
        state.mode != RunMode::Naive && !state.coreset.empty();
    const SupervisedModel model = replay ? coreset_predict_pass() : state.sup;
    std::vector<double> row(t + 1);
    for (std::size_t j = 0; j <= t; ++j) row[j] = eval_task(j, model, t);
    state.R.push_back(std::move(row));
  } else {
    train_vae(t);
    std::vector<double> row(t + 1);
    for (std::size_t j = 0; j <= t; ++j) row[j] = eval_vae_task(j, t);
    state.R.push_back(std::move(row));
  }
  state.next_task = t + 1;
}

}  // namespace cle
