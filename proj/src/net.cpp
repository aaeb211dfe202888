#include "cle/net.hpp"

#include <cmath>

#include "cle/special.hpp"

namespace cle {

namespace {

struct DenseBind {
  NodeId w_mu, w_raw, b_mu, b_raw;
};

DenseBind bind_dense(Binder& b, DenseGaussian& d, bool train, LrGroup grp) {
  DenseBind db;
  if (train) {
    db.w_mu = b.bind(d.w.mu, grp);
    db.w_raw = b.bind(d.w.raw_sigma, grp);
    db.b_mu = b.bind(d.b.mu, grp);
    db.b_raw = b.bind(d.b.raw_sigma, grp);
  } else {
    db.w_mu = b.constant(d.w.mu);
    db.w_raw = b.constant(d.w.raw_sigma);
    db.b_mu = b.constant(d.b.mu);
    db.b_raw = b.constant(d.b.raw_sigma);
  }
  return db;
}

NodeId dense_forward(Binder& b, NodeId x, const DenseBind& db,
                     const DenseGaussian& d, bool sample, RngStream* noise) {
  Graph& g = b.graph();
  const std::size_t n = g.val(x).shape()[0];
  NodeId w, bias;
  if (sample && noise) {
    Tensor eps_w = noise->normal_tensor({d.in, d.out});
    Tensor eps_b = noise->normal_tensor({1, d.out});
    w = dist::gaussian_sample(g, db.w_mu, db.w_raw, eps_w);
    bias = dist::gaussian_sample(g, db.b_mu, db.b_raw, eps_b);
  } else {
    w = db.w_mu;
    bias = db.b_mu;
  }
  return g.add(g.matmul(x, w), g.tile_rows(bias, n));
}

NodeId dense_kl_p0(Binder& b, const DenseBind& db, const DenseGaussian& d,
                   double sigma0) {
  Graph& g = b.graph();
  const double var0 = sigma0 * sigma0;
  NodeId kw = dist::gaussian_kl(g, db.w_mu, db.w_raw,
                                Tensor({d.in, d.out}), Tensor({d.in, d.out}, var0));
  NodeId kb = dist::gaussian_kl(g, db.b_mu, db.b_raw,
                                Tensor({1, d.out}), Tensor({1, d.out}, var0));
  return g.add(kw, kb);
}

NodeId dense_kl_prior(Binder& b, const DenseBind& db, const LayerPrior& prior) {
  Graph& g = b.graph();
  NodeId kw = dist::gaussian_kl(g, db.w_mu, db.w_raw, prior.w_mean, prior.w_var);
  NodeId kb = dist::gaussian_kl(g, db.b_mu, db.b_raw, prior.b_mean, prior.b_var);
  return g.add(kw, kb);
}

// MlInit is plain maximum likelihood: posterior means, dense mask.
bool sample_weights(const ElboSpec& spec) {
  return spec.mode != RunMode::Naive && spec.phase != Phase::MlInit;
}

bool stochastic_masks(const ElboSpec& spec) {
  return spec.mode == RunMode::Npbcl && spec.phase == Phase::Masked;
}

LayerBindOptions trunk_bind_options(const ElboSpec& spec, std::size_t layer_idx,
                                    const TaskMaskSet* update, bool decoder_part) {
  LayerBindOptions opt;
  opt.train_gauss = true;
  opt.train_ibp = stochastic_masks(spec);
  if (update) {
    const auto& vec = decoder_part ? update->dec : update->trunk;
    if (layer_idx < vec.size()) opt.gauss_update_mask = &vec[layer_idx];
  }
  return opt;
}

// Per-layer forward dispatch over mask mode.
LayerForward trunk_layer_forward(Binder& b, NodeId x, const LayerBind& lb,
                                 const IbpLayerPosterior& layer,
                                 const ElboSpec& spec, const Tensor* frozen) {
  if (spec.mode != RunMode::Npbcl || spec.phase == Phase::MlInit)
    return layer_forward_dense(b, x, lb, layer,
                               sample_weights(spec) ? spec.noise : nullptr);
  if (stochastic_masks(spec))
    return layer_forward_stochastic(b, x, lb, layer, spec.lambda, *spec.noise);
  if (!frozen)
    throw std::runtime_error("elbo: frozen-mask phase without stored mask");
  return layer_forward_frozen(b, x, lb, layer, *frozen, spec.noise);
}

NodeId gaussian_kl_layer(Binder& b, const LayerBind& lb,
                         const LayerPrior& prior) {
  Graph& g = b.graph();
  NodeId kw = dist::gaussian_kl(g, lb.mu, lb.raw_sigma, prior.w_mean, prior.w_var);
  NodeId kb = dist::gaussian_kl(g, lb.b_mu, lb.b_raw_sigma, prior.b_mean,
                                prior.b_var);
  return g.add(kw, kb);
}

}  // namespace

DenseGaussian DenseGaussian::init(std::size_t in, std::size_t out,
                                  double sigma0, RngStream& rng) {
  DenseGaussian d;
  d.in = in;
  d.out = out;
  Tensor mu({in, out});
  for (std::size_t i = 0; i < mu.size(); ++i) mu[i] = 0.1 * rng.normal();
  d.w.mu = Param(std::move(mu));
  d.w.raw_sigma = Param(Tensor({in, out}, softplus_inv(0.1 * sigma0)));
  Tensor bmu({1, out});
  for (std::size_t i = 0; i < bmu.size(); ++i) bmu[i] = 0.1 * rng.normal();
  d.b.mu = Param(std::move(bmu));
  d.b.raw_sigma = Param(Tensor({1, out}, softplus_inv(0.1 * sigma0)));
  return d;
}

void DenseGaussian::grow_rows(std::size_t g, double sigma0) {
  if (g == 0) return;
  auto pad = [&](Param& p, double fill) {
    Tensor nv({in + g, out}), nm({in + g, out}), nvv({in + g, out});
    for (std::size_t i = 0; i < in * out; ++i) {
      nv[i] = p.value[i];
      nm[i] = p.m[i];
      nvv[i] = p.v[i];
    }
    for (std::size_t i = in * out; i < (in + g) * out; ++i) nv[i] = fill;
    p.value = std::move(nv);
    p.m = std::move(nm);
    p.v = std::move(nvv);
  };
  pad(w.mu, 0.0);
  pad(w.raw_sigma, softplus_inv(0.1 * sigma0));
  in += g;
}

LayerPrior LayerPrior::p0(std::size_t d, std::size_t k, double sigma0) {
  LayerPrior p;
  const double var0 = sigma0 * sigma0;
  p.w_mean = Tensor({d, k});
  p.w_var = Tensor({d, k}, var0);
  p.b_mean = Tensor({1, k});
  p.b_var = Tensor({1, k}, var0);
  return p;
}

void LayerPrior::pad_to(std::size_t d, std::size_t k, double sigma0) {
  const std::size_t od = w_mean.shape()[0], ok = w_mean.shape()[1];
  if (od == d && ok == k) return;
  const double var0 = sigma0 * sigma0;
  Tensor wm({d, k}), wv({d, k}, var0), bm({1, k}), bv({1, k}, var0);
  for (std::size_t r = 0; r < od; ++r)
    for (std::size_t c = 0; c < ok; ++c) {
      wm[r * k + c] = w_mean[r * ok + c];
      wv[r * k + c] = w_var[r * ok + c];
    }
  for (std::size_t c = 0; c < ok; ++c) {
    bm[c] = b_mean[c];
    bv[c] = b_var[c];
  }
  w_mean = std::move(wm);
  w_var = std::move(wv);
  b_mean = std::move(bm);
  b_var = std::move(bv);
}

SupervisedModel SupervisedModel::init(std::size_t input_dim,
                                      const std::vector<std::size_t>& hidden,
                                      double alpha, double sigma0,
                                      RngStream& rng) {
  SupervisedModel m;
  std::size_t d = input_dim;
  for (std::size_t k : hidden) {
    m.trunk.push_back(IbpLayerPosterior::init(d, k, alpha, sigma0, rng));
    d = k;
  }
  return m;
}

void SupervisedModel::ensure_head(std::size_t task, std::size_t classes,
                                  double sigma0, RngStream& rng) {
  while (heads.size() <= task) {
    heads.push_back(DenseGaussian::init(last_width(), classes, sigma0, rng));
    head_classes.push_back(classes);
  }
}

NodeId build_supervised_elbo(Binder& binder, SupervisedModel& model,
                             const Tensor& x, const std::vector<int>& y,
                             std::size_t task, const ElboSpec& spec) {
  if (y.empty()) throw std::runtime_error("supervised_elbo: empty batch");
  if (task >= model.heads.size())
    throw std::runtime_error("supervised_elbo: unknown task " +
                             std::to_string(task));
  Graph& g = binder.graph();

  std::vector<LayerBind> binds;
  for (std::size_t l = 0; l < model.trunk.size(); ++l)
    binds.push_back(bind_layer(
        binder, model.trunk[l],
        trunk_bind_options(spec, l, spec.update_masks, false)));
  DenseBind head = bind_dense(binder, model.heads[task], true, LrGroup::Head);

  NodeId xc = g.constant(x);
  const int s = std::max(1, spec.samples);
  NodeId acc = g.constant(0.0);
  for (int i = 0; i < s; ++i) {
    NodeId h = xc;
    NodeId kl_mask = g.constant(0.0);
    for (std::size_t l = 0; l < model.trunk.size(); ++l) {
      const Tensor* frozen =
          spec.frozen_masks && l < spec.frozen_masks->trunk.size()
              ? &spec.frozen_masks->trunk[l]
              : nullptr;
      LayerForward f =
          trunk_layer_forward(binder, h, binds[l], model.trunk[l], spec, frozen);
      h = g.relu(f.act);
      if (f.kl_mask >= 0) kl_mask = g.add(kl_mask, f.kl_mask);
    }
    NodeId logits = dense_forward(binder, h, head, model.heads[task],
                                  sample_weights(spec), spec.noise);
    NodeId ll = g.loglik_categorical(logits, y);
    NodeId term = g.sub(g.mul(ll, g.constant(spec.data_scale)), kl_mask);
    acc = g.add(acc, term);
  }
  NodeId avg = g.div(acc, g.constant(static_cast<double>(s)));

  NodeId outer = g.constant(0.0);
  const bool want_kl = spec.phase != Phase::MlInit && spec.mode != RunMode::Naive;
  if (want_kl) {
    if (!spec.priors) throw std::runtime_error("supervised_elbo: missing priors");
    for (std::size_t l = 0; l < model.trunk.size(); ++l) {
      outer = g.add(outer, gaussian_kl_layer(binder, binds[l],
                                             spec.priors->trunk[l]));
      if (spec.mode == RunMode::Npbcl && spec.phase == Phase::Masked)
        outer = g.add(outer, dist::kumaraswamy_beta_kl(
                                 g, binds[l].raw_a, binds[l].raw_b,
                                 model.trunk[l].alpha, 1.0));
    }
    outer = g.add(outer, dense_kl_p0(binder, head, model.heads[task],
                                     spec.priors->sigma0));
  }
  return g.sub(outer, avg);  // negative ELBO
}

Tensor supervised_predict(const SupervisedModel& model, const Tensor& x,
                          std::size_t task, const TaskMaskSet* masks,
                          int samples, RunMode mode, RngStream* noise) {
  if (task >= model.heads.size())
    throw std::runtime_error("predict: unknown task " + std::to_string(task));
  const std::size_t n = x.shape()[0];
  const std::size_t c = model.head_classes[task];
  const bool sample = mode != RunMode::Naive && noise != nullptr;
  const int s = sample ? std::max(1, samples) : 1;

  Tensor probs({n, c});
  for (int i = 0; i < s; ++i) {
    Graph g;
    Binder b(g);
    ElboSpec spec;
    spec.mode = mode;
    spec.phase = Phase::Finetune;  // frozen-mask style forward
    spec.noise = sample ? noise : nullptr;
    NodeId h = g.constant(x);
    auto& trunk = const_cast<std::vector<IbpLayerPosterior>&>(model.trunk);
    for (std::size_t l = 0; l < trunk.size(); ++l) {
      LayerBindOptions opt;
      opt.train_gauss = false;
      opt.train_ibp = false;
      LayerBind lb = bind_layer(b, trunk[l], opt);
      LayerForward f;
      if (mode == RunMode::Npbcl) {
        if (!masks || l >= masks->trunk.size())
          throw std::runtime_error("predict: no stored mask for task");
        f = layer_forward_frozen(b, h, lb, trunk[l], masks->trunk[l],
                                 sample ? noise : nullptr);
      } else {
        f = layer_forward_dense(b, h, lb, trunk[l], sample ? noise : nullptr);
      }
      h = g.relu(f.act);
    }
    auto& head = const_cast<DenseGaussian&>(model.heads[task]);
    DenseBind hb = bind_dense(b, head, false, LrGroup::Head);
    NodeId logits = dense_forward(b, h, hb, head, sample, noise);
    const Tensor& lv = g.val(logits);
    for (std::size_t r = 0; r < n; ++r) {
      const double* row = lv.data() + r * c;
      double mx = row[0];
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
      double z = 0.0;
      for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
      for (std::size_t j = 0; j < c; ++j)
        probs[r * c + j] += std::exp(row[j] - mx) / z;
    }
  }
  for (std::size_t i = 0; i < probs.size(); ++i)
    probs[i] /= static_cast<double>(s);
  return probs;
}

VaeModel VaeModel::init(std::size_t data_dim,
                        const std::vector<std::size_t>& enc_hidden,
                        std::size_t latent, double alpha, double sigma0,
                        RngStream& rng) {
  VaeModel m;
  m.data_dim = data_dim;
  m.latent_dim = latent;
  std::size_t d = data_dim;
  for (std::size_t k : enc_hidden) {
    m.encoder.push_back(IbpLayerPosterior::init(d, k, alpha, sigma0, rng));
    d = k;
  }
  // decoder mirrors the encoder widths
  std::size_t dd = latent;
  for (std::size_t i = enc_hidden.size(); i-- > 0;) {
    m.decoder.push_back(
        IbpLayerPosterior::init(dd, enc_hidden[i], alpha, sigma0, rng));
    dd = enc_hidden[i];
  }
  m.out = DenseGaussian::init(dd, data_dim, sigma0, rng);
  return m;
}

void VaeModel::ensure_heads(std::size_t task, double sigma0, RngStream& rng) {
  const std::size_t enc_out = encoder.back().width;
  while (z_mean_heads.size() <= task) {
    z_mean_heads.push_back(
        DenseGaussian::init(enc_out, latent_dim, sigma0, rng));
    z_raw_sigma_heads.push_back(
        DenseGaussian::init(enc_out, latent_dim, sigma0, rng));
  }
}

namespace {

struct VaeSampleTerm {
  NodeId recon;    // sum of Bernoulli log likelihood
  NodeId kl_z;     // sum of latent KLs over the batch
  NodeId kl_mask;  // scalar
};

VaeSampleTerm vae_forward_sample(Binder& binder, VaeModel& model, NodeId xc,
                                 const Tensor& x, std::size_t task,
                                 const std::vector<LayerBind>& enc_binds,
                                 const std::vector<LayerBind>& dec_binds,
                                 const DenseBind& zmu_bind,
                                 const DenseBind& zsig_bind,
                                 const DenseBind& out_bind,
                                 const ElboSpec& spec) {
  Graph& g = binder.graph();
  const std::size_t n = x.shape()[0];
  NodeId kl_mask = g.constant(0.0);

  NodeId h = xc;
  for (std::size_t l = 0; l < model.encoder.size(); ++l) {
    const Tensor* frozen =
        spec.frozen_masks && l < spec.frozen_masks->trunk.size()
            ? &spec.frozen_masks->trunk[l]
            : nullptr;
    LayerForward f = trunk_layer_forward(binder, h, enc_binds[l],
                                         model.encoder[l], spec, frozen);
    h = g.relu(f.act);
    if (f.kl_mask >= 0) kl_mask = g.add(kl_mask, f.kl_mask);
  }

  NodeId mu_z = dense_forward(binder, h, zmu_bind, model.z_mean_heads[task],
                              sample_weights(spec), spec.noise);
  NodeId raw_z = dense_forward(binder, h, zsig_bind,
                               model.z_raw_sigma_heads[task],
                               sample_weights(spec), spec.noise);
  NodeId sigma_z = g.softplus(raw_z);
  Tensor eps = spec.noise->normal_tensor({n, model.latent_dim});
  NodeId z = g.add(mu_z, g.mul(sigma_z, g.constant(eps)));

  // KL(N(mu_z, sigma_z^2) || N(0, I)) summed over batch and latent dims
  NodeId klz_elem =
      g.sub(g.add(g.neg(g.log(sigma_z)),
                  g.mul(g.constant(0.5),
                        g.add(g.mul(sigma_z, sigma_z), g.mul(mu_z, mu_z)))),
            g.constant(0.5));
  NodeId kl_z = g.sum(klz_elem);

  NodeId hd = z;
  for (std::size_t l = 0; l < model.decoder.size(); ++l) {
    const Tensor* frozen =
        spec.frozen_masks && l < spec.frozen_masks->dec.size()
            ? &spec.frozen_masks->dec[l]
            : nullptr;
    LayerForward f = trunk_layer_forward(binder, hd, dec_binds[l],
                                         model.decoder[l], spec, frozen);
    hd = g.relu(f.act);
    if (f.kl_mask >= 0) kl_mask = g.add(kl_mask, f.kl_mask);
  }
  NodeId logits = dense_forward(binder, hd, out_bind, model.out,
                                sample_weights(spec), spec.noise);
  NodeId recon = g.loglik_bernoulli(logits, x);
  return {recon, kl_z, kl_mask};
}

}  // namespace

NodeId build_vae_elbo(Binder& binder, VaeModel& model, const Tensor& x,
                      std::size_t task, const ElboSpec& spec) {
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] < 0.0 || x[i] > 1.0)
      throw std::runtime_error("vae_elbo: pixel values must lie in [0,1]");
  if (task >= model.z_mean_heads.size())
    throw std::runtime_error("vae_elbo: unknown task " + std::to_string(task));
  Graph& g = binder.graph();

  std::vector<LayerBind> enc_binds, dec_binds;
  for (std::size_t l = 0; l < model.encoder.size(); ++l)
    enc_binds.push_back(bind_layer(
        binder, model.encoder[l],
        trunk_bind_options(spec, l, spec.update_masks, false)));
  for (std::size_t l = 0; l < model.decoder.size(); ++l)
    dec_binds.push_back(bind_layer(
        binder, model.decoder[l],
        trunk_bind_options(spec, l, spec.update_masks, true)));
  DenseBind zmu_bind =
      bind_dense(binder, model.z_mean_heads[task], true, LrGroup::Head);
  DenseBind zsig_bind =
      bind_dense(binder, model.z_raw_sigma_heads[task], true, LrGroup::Head);
  DenseBind out_bind = bind_dense(binder, model.out, true, LrGroup::Std);

  NodeId xc = g.constant(x);
  const int s = std::max(1, spec.samples);
  NodeId acc = g.constant(0.0);
  for (int i = 0; i < s; ++i) {
    VaeSampleTerm t =
        vae_forward_sample(binder, model, xc, x, task, enc_binds, dec_binds,
                           zmu_bind, zsig_bind, out_bind, spec);
    NodeId data_term = g.mul(g.sub(t.recon, t.kl_z), g.constant(spec.data_scale));
    acc = g.add(acc, g.sub(data_term, t.kl_mask));
  }
  NodeId avg = g.div(acc, g.constant(static_cast<double>(s)));

  NodeId outer = g.constant(0.0);
  const bool want_kl = spec.phase != Phase::MlInit && spec.mode != RunMode::Naive;
  if (want_kl) {
    if (!spec.priors) throw std::runtime_error("vae_elbo: missing priors");
    for (std::size_t l = 0; l < model.encoder.size(); ++l) {
      outer = g.add(outer, gaussian_kl_layer(binder, enc_binds[l],
                                             spec.priors->trunk[l]));
      if (spec.mode == RunMode::Npbcl && spec.phase == Phase::Masked)
        outer = g.add(outer, dist::kumaraswamy_beta_kl(
                                 g, enc_binds[l].raw_a, enc_binds[l].raw_b,
                                 model.encoder[l].alpha, 1.0));
    }
    for (std::size_t l = 0; l < model.decoder.size(); ++l) {
      outer = g.add(outer, gaussian_kl_layer(binder, dec_binds[l],
                                             spec.priors->decoder[l]));
      if (spec.mode == RunMode::Npbcl && spec.phase == Phase::Masked)
        outer = g.add(outer, dist::kumaraswamy_beta_kl(
                                 g, dec_binds[l].raw_a, dec_binds[l].raw_b,
                                 model.decoder[l].alpha, 1.0));
    }
    outer = g.add(outer, dense_kl_prior(binder, out_bind, *spec.priors->out));
    outer = g.add(outer, dense_kl_p0(binder, zmu_bind, model.z_mean_heads[task],
                                     spec.priors->sigma0));
    outer = g.add(outer, dense_kl_p0(binder, zsig_bind,
                                     model.z_raw_sigma_heads[task],
                                     spec.priors->sigma0));
  }
  return g.sub(outer, avg);
}

double vae_eval_elbo(const VaeModel& model, const Tensor& x, std::size_t task,
                     const TaskMaskSet& masks, int samples, RngStream& noise,
                     RunMode mode) {
  auto& m = const_cast<VaeModel&>(model);
  Graph g;
  Binder b(g);
  ElboSpec spec;
  spec.mode = mode;
  spec.phase = Phase::Finetune;
  spec.samples = samples;
  spec.data_scale = 1.0;
  spec.frozen_masks = &masks;
  spec.noise = &noise;

  std::vector<LayerBind> enc_binds, dec_binds;
  LayerBindOptions ro;
  ro.train_gauss = false;
  ro.train_ibp = false;
  for (auto& l : m.encoder) enc_binds.push_back(bind_layer(b, l, ro));
  for (auto& l : m.decoder) dec_binds.push_back(bind_layer(b, l, ro));
  DenseBind zmu_bind = bind_dense(b, m.z_mean_heads[task], false, LrGroup::Head);
  DenseBind zsig_bind =
      bind_dense(b, m.z_raw_sigma_heads[task], false, LrGroup::Head);
  DenseBind out_bind = bind_dense(b, m.out, false, LrGroup::Std);

  NodeId xc = g.constant(x);
  double acc = 0.0;
  const int s = std::max(1, samples);
  for (int i = 0; i < s; ++i) {
    VaeSampleTerm t = vae_forward_sample(b, m, xc, x, task, enc_binds, dec_binds,
                                         zmu_bind, zsig_bind, out_bind, spec);
    acc += g.val(t.recon).value() - g.val(t.kl_z).value();
  }
  return acc / (static_cast<double>(s) * static_cast<double>(x.shape()[0]));
}

Tensor vae_generate(const VaeModel& model, std::size_t task,
                    const TaskMaskSet& masks, std::size_t n, RngStream& rng,
                    RunMode mode) {
  if (task >= model.z_mean_heads.size())
    throw std::runtime_error("vae_generate: unknown task " +
                             std::to_string(task));
  auto& m = const_cast<VaeModel&>(model);
  Graph g;
  Binder b(g);
  Tensor z = rng.normal_tensor({n, model.latent_dim});
  NodeId h = g.constant(z);
  LayerBindOptions ro;
  ro.train_gauss = false;
  ro.train_ibp = false;
  for (std::size_t l = 0; l < m.decoder.size(); ++l) {
    LayerBind lb = bind_layer(b, m.decoder[l], ro);
    LayerForward f;
    if (mode == RunMode::Npbcl) {
      if (l >= masks.dec.size())
        throw std::runtime_error("vae_generate: no stored decoder mask");
      f = layer_forward_frozen(b, h, lb, m.decoder[l], masks.dec[l], nullptr);
    } else {
      f = layer_forward_dense(b, h, lb, m.decoder[l], nullptr);
    }
    h = g.relu(f.act);
  }
  DenseBind ob = bind_dense(b, m.out, false, LrGroup::Std);
  NodeId logits = dense_forward(b, h, ob, m.out, false, nullptr);
  NodeId px = g.sigmoid(logits);
  return g.val(px);
}

}  // namespace cle
