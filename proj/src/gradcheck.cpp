#include "cle/gradcheck.hpp"

#include <cmath>
#include <vector>

#include "cle/net.hpp"

namespace cle {

namespace {

double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({1.0, std::fabs(a), std::fabs(b)});
}

// ---- random small graphs ------------------------------------------------

struct Step {
  int op;       // 0 add, 1 sub, 2 mul, 3 sigmoid, 4 softplus, 5 exp, 6 neg, 7 relu
  int a, b;     // operand slots
};

struct Recipe {
  std::size_t leaves;
  std::vector<Step> steps;
};

Recipe random_recipe(RngStream& rng) {
  Recipe r;
  r.leaves = 1 + rng.integer(3);
  const std::size_t n_steps = 1 + rng.integer(5);
  for (std::size_t s = 0; s < n_steps; ++s) {
    Step st;
    st.op = static_cast<int>(rng.integer(8));
    const std::size_t avail = r.leaves + s;
    st.a = static_cast<int>(rng.integer(avail));
    st.b = static_cast<int>(rng.integer(avail));
    r.steps.push_back(st);
  }
  return r;
}

// Builds the recipe's graph over {2,3} leaves; loss touches every leaf.
NodeId build_recipe(Graph& g, const Recipe& r, const std::vector<Tensor>& vals,
                    std::vector<NodeId>* leaf_ids) {
  std::vector<NodeId> slot;
  for (std::size_t i = 0; i < r.leaves; ++i) {
    slot.push_back(g.leaf(vals[i], true));
    if (leaf_ids) leaf_ids->push_back(slot.back());
  }
  for (const Step& st : r.steps) {
    NodeId a = slot[st.a], b = slot[st.b];
    switch (st.op) {
      case 0: slot.push_back(g.add(a, b)); break;
      case 1: slot.push_back(g.sub(a, b)); break;
      case 2: slot.push_back(g.mul(a, b)); break;
      case 3: slot.push_back(g.sigmoid(a)); break;
      case 4: slot.push_back(g.softplus(a)); break;
      // bounded exp composition; a bare exp chain can overflow under mul
      case 5: slot.push_back(g.exp(g.neg(g.softplus(a)))); break;
      case 6: slot.push_back(g.neg(a)); break;
      default: slot.push_back(g.relu(a)); break;
    }
  }
  NodeId loss = g.sum(slot.back());
  for (std::size_t i = 0; i < r.leaves; ++i)
    loss = g.add(loss, g.mul(g.constant(0.1), g.sum(slot[i])));
  return loss;
}

double check_random_graphs(std::uint64_t seed, int count, int* checked) {
  double worst = 0.0;
  for (int gi = 0; gi < count; ++gi) {
    RngStream rng(seed, "gc-graph", static_cast<std::uint64_t>(gi));
    Recipe r = random_recipe(rng);
    std::vector<Tensor> vals;
    for (std::size_t i = 0; i < r.leaves; ++i) {
      Tensor t({2, 3});
      for (std::size_t j = 0; j < t.size(); ++j)
        t[j] = 4.0 * rng.uniform() - 2.0;
      vals.push_back(std::move(t));
    }
    Graph g;
    std::vector<NodeId> leaves;
    NodeId loss = build_recipe(g, r, vals, &leaves);
    g.backward(loss);

    const double h = 1e-5;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
      if (!g.has_grad(leaves[li])) continue;
      const Tensor& ad = g.grad(leaves[li]);
      for (std::size_t j = 0; j < vals[li].size(); ++j) {
        auto eval = [&](double delta) {
          std::vector<Tensor> v2 = vals;
          v2[li][j] += delta;
          Graph g2;
          return g2.val(build_recipe(g2, r, v2, nullptr)).value();
        };
        const double fd = (eval(h) - eval(-h)) / (2.0 * h);
        worst = std::max(worst, rel_err(ad[j], fd));
      }
    }
    ++*checked;
  }
  return worst;
}

// ---- ELBO suites --------------------------------------------------------

template <typename EvalFn, typename GradFn>
double check_params(std::vector<Param*> params, EvalFn eval, GradFn grads,
                    RngStream& pick, int samples_per_param, int* checked) {
  double worst = 0.0;
  std::vector<Tensor> ad = grads();
  const double h = 1e-5;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (int s = 0; s < samples_per_param; ++s) {
      const std::size_t j = pick.integer(params[pi]->value.size());
      const double keep = params[pi]->value[j];
      params[pi]->value[j] = keep + h;
      const double up = eval();
      params[pi]->value[j] = keep - h;
      const double dn = eval();
      params[pi]->value[j] = keep;
      const double fd = (up - dn) / (2.0 * h);
      worst = std::max(worst, rel_err(ad[pi][j], fd));
      ++*checked;
    }
  }
  return worst;
}

double check_supervised_elbo(std::uint64_t seed, int* checked) {
  RngStream init(seed, "gc-sup-init");
  SupervisedModel model = SupervisedModel::init(3, {4, 4}, 5.0, 0.6, init);
  model.ensure_head(0, 2, 0.6, init);

  RngStream drng(seed, "gc-sup-data");
  Tensor x = drng.normal_tensor({6, 3});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.5 + 0.2 * x[i];
  std::vector<int> y = {0, 1, 0, 1, 1, 0};

  PriorStore priors;
  priors.sigma0 = 0.6;
  priors.trunk.push_back(LayerPrior::p0(3, 4, 0.6));
  priors.trunk.push_back(LayerPrior::p0(4, 4, 0.6));

  auto make_spec = [&](RngStream& noise) {
    ElboSpec spec;
    spec.mode = RunMode::Npbcl;
    spec.phase = Phase::Masked;
    spec.samples = 2;
    spec.lambda = 1.0;
    spec.priors = &priors;
    spec.noise = &noise;
    return spec;
  };
  auto eval = [&]() {
    Graph g;
    Binder b(g);
    RngStream noise(seed, "gc-sup-noise");
    ElboSpec spec = make_spec(noise);
    return g.val(build_supervised_elbo(b, model, x, y, 0, spec)).value();
  };

  std::vector<Param*> params;
  for (auto& l : model.trunk) {
    params.push_back(&l.weights.mu);
    params.push_back(&l.weights.raw_sigma);
    params.push_back(&l.bias.mu);
    params.push_back(&l.bias.raw_sigma);
    params.push_back(&l.mask_logits);
    params.push_back(&l.sticks.raw_a);
    params.push_back(&l.sticks.raw_b);
  }
  params.push_back(&model.heads[0].w.mu);
  params.push_back(&model.heads[0].b.mu);
  params.push_back(&model.heads[0].w.raw_sigma);

  auto grads = [&]() {
    Graph g;
    Binder b(g);
    RngStream noise(seed, "gc-sup-noise");
    ElboSpec spec = make_spec(noise);
    NodeId loss = build_supervised_elbo(b, model, x, y, 0, spec);
    g.backward(loss);
    std::vector<Tensor> out;
    for (Param* p : params) {
      Tensor grad(p->value.shape());
      for (const auto& e : b.entries())
        if (e.param == p && g.has_grad(e.node)) grad = g.grad(e.node);
      out.push_back(std::move(grad));
    }
    return out;
  };

  RngStream pick(seed, "gc-sup-pick");
  return check_params(params, eval, grads, pick, 3, checked);
}

double check_vae_elbo(std::uint64_t seed, int* checked) {
  RngStream init(seed, "gc-vae-init");
  VaeModel model = VaeModel::init(6, {5}, 2, 5.0, 0.6, init);
  model.ensure_heads(0, 0.6, init);

  RngStream drng(seed, "gc-vae-data");
  Tensor x({4, 6});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = drng.uniform();

  PriorStore priors;
  priors.sigma0 = 0.6;
  priors.trunk.push_back(LayerPrior::p0(6, 5, 0.6));
  priors.decoder.push_back(LayerPrior::p0(2, 5, 0.6));
  priors.out = LayerPrior::p0(5, 6, 0.6);

  auto eval_graph = [&](bool want_grads, Graph& g, Binder& b) {
    RngStream noise(seed, "gc-vae-noise");
    ElboSpec spec;
    spec.mode = RunMode::Npbcl;
    spec.phase = Phase::Masked;
    spec.samples = 2;
    spec.lambda = 1.0;
    spec.priors = &priors;
    spec.noise = &noise;
    NodeId loss = build_vae_elbo(b, model, x, 0, spec);
    if (want_grads) g.backward(loss);
    return loss;
  };
  auto eval = [&]() {
    Graph g;
    Binder b(g);
    return g.val(eval_graph(false, g, b)).value();
  };

  std::vector<Param*> params;
  for (auto* vec : {&model.encoder, &model.decoder})
    for (auto& l : *vec) {
      params.push_back(&l.weights.mu);
      params.push_back(&l.weights.raw_sigma);
      params.push_back(&l.mask_logits);
      params.push_back(&l.sticks.raw_a);
      params.push_back(&l.sticks.raw_b);
    }
  params.push_back(&model.out.w.mu);
  params.push_back(&model.z_mean_heads[0].w.mu);
  params.push_back(&model.z_raw_sigma_heads[0].w.mu);

  auto grads = [&]() {
    Graph g;
    Binder b(g);
    eval_graph(true, g, b);
    std::vector<Tensor> out;
    for (Param* p : params) {
      Tensor grad(p->value.shape());
      for (const auto& e : b.entries())
        if (e.param == p && g.has_grad(e.node)) grad = g.grad(e.node);
      out.push_back(std::move(grad));
    }
    return out;
  };

  RngStream pick(seed, "gc-vae-pick");
  return check_params(params, eval, grads, pick, 3, checked);
}

}  // namespace

GradcheckReport run_gradcheck(std::uint64_t seed) {
  GradcheckReport rep;
  rep.max_rel_graph =
      check_random_graphs(seed, 100, &rep.graphs_checked);
  int n1 = 0, n2 = 0;
  const double e1 = check_supervised_elbo(seed, &n1);
  const double e2 = check_vae_elbo(seed, &n2);
  rep.max_rel_elbo = std::max(e1, e2);
  rep.elbo_params_checked = n1 + n2;
  return rep;
}

}  // namespace cle
