#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "cle/ibp.hpp"
#include "cle/rng.hpp"
#include "cle/special.hpp"

using namespace cle;

namespace {

// Sets a layer to exact hand-picked posteriors: weight/bias means, tight
// sigmas, saturated mask logits, near-degenerate sticks.
void pin_layer(IbpLayerPosterior& layer, const Tensor& mu, const Tensor& b_mu,
               const Tensor& rho, double sigma, double stick_a,
               double stick_b) {
  layer.weights.mu.value = mu;
  layer.weights.raw_sigma.value =
      Tensor(mu.shape(), softplus_inv(sigma));
  layer.bias.mu.value = b_mu;
  layer.bias.raw_sigma.value = Tensor(b_mu.shape(), softplus_inv(sigma));
  layer.mask_logits.value = rho;
  layer.sticks.raw_a.value =
      Tensor({layer.width}, softplus_inv(stick_a));
  layer.sticks.raw_b.value =
      Tensor({layer.width}, softplus_inv(stick_b));
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0u);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) r[idx[i]] = double(i);
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = double(x.size());
  double mx = (n - 1) / 2, sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - mx);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - mx) * (ry[i] - mx);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST_CASE("stick_pis") {
  Tensor pis = stick_pis(Tensor({3}, {0.5, 0.5, 0.5}));
  CHECK(pis[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(pis[1] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(pis[2] == doctest::Approx(0.125).epsilon(1e-12));

  Tensor ones = stick_pis(Tensor({4}, 1.0 - 1e-8));
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(ones[i] == doctest::Approx(1.0).epsilon(1e-6));

  RngStream rng(3, "sticks");
  Tensor nu = rng.uniform_open_tensor({10});
  Tensor pis2 = stick_pis(nu);
  double prod = 1.0;
  for (std::size_t k = 0; k < 10; ++k) {
    prod *= nu[k];
    CHECK(pis2[k] == doctest::Approx(prod).epsilon(1e-10));
    if (k) CHECK(pis2[k] <= pis2[k - 1]);
  }
}

TEST_CASE("harden") {
  Tensor h = harden(Tensor({4}, {0.9, 0.1, 0.5, 0.5000001}));
  CHECK(h[0] == 1.0);
  CHECK(h[1] == 0.0);
  CHECK(h[2] == 0.0);  // strict inequality at exactly 0.5
  CHECK(h[3] == 1.0);
}

TEST_CASE("union_masks and pad_mask") {
  Tensor a({1, 2}, {1, 0});
  Tensor b({1, 2}, {0, 1});
  CHECK(union_masks({a, b}) == Tensor({1, 2}, {1, 1}));
  CHECK(union_masks({a}) == a);

  // narrower masks are padded with zero columns
  Tensor narrow({1, 1}, {1.0});
  CHECK(union_masks({narrow, b}) == Tensor({1, 2}, {1, 1}));
  CHECK(pad_mask(narrow, 2, 3) == Tensor({2, 3}, {1, 0, 0, 0, 0, 0}));

  // idempotent and commutative
  RngStream rng(5, "union");
  Tensor r1({3, 4}), r2({3, 4});
  for (std::size_t i = 0; i < 12; ++i) r1[i] = rng.uniform() < 0.5;
  for (std::size_t i = 0; i < 12; ++i) r2[i] = rng.uniform() < 0.5;
  CHECK(union_masks({r1, r1}) == r1);
  CHECK(union_masks({r1, r2}) == union_masks({r2, r1}));
}

TEST_CASE("frozen-mask forward hand examples") {
  RngStream rng(7, "ibp-init");

  SUBCASE("all-zero mask kills weights and bias") {
    auto layer = IbpLayerPosterior::init(3, 4, 5.0, 0.6, rng);
    Graph g;
    Binder bind(g);
    LayerBind lb = bind_layer(bind, layer, {});
    NodeId x = g.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
    auto fwd = layer_forward_frozen(bind, x, lb, layer, Tensor({3, 4}), nullptr);
    CHECK(g.val(fwd.act) == Tensor({2, 4}));
  }

  SUBCASE("D=1 K=1: x=2, mean weight 3, bias 1, mask 1 -> 7") {
    auto layer = IbpLayerPosterior::init(1, 1, 5.0, 0.6, rng);
    pin_layer(layer, Tensor({1, 1}, {3.0}), Tensor({1, 1}, {1.0}),
              Tensor({1, 1}, {0.0}), 0.3, 2.0, 1.0);
    Graph g;
    Binder bind(g);
    LayerBind lb = bind_layer(bind, layer, {});
    NodeId x = g.constant(Tensor({1, 1}, {2.0}));
    auto fwd =
        layer_forward_frozen(bind, x, lb, layer, Tensor({1, 1}, {1.0}), nullptr);
    CHECK(g.val(fwd.act).at(0, 0) == doctest::Approx(7.0).epsilon(1e-12));
  }
}

TEST_CASE("stochastic mean matches theta-weighted frozen forward") {
  // Saturated mask logits and tight weight posteriors on a 2x3 layer; the
  // MC mean over noise draws must land on x (theta .* mu) + b colmax(theta).
  RngStream rng(11, "ibp-mc");
  auto layer = IbpLayerPosterior::init(2, 3, 5.0, 0.6, rng);
  pin_layer(layer, Tensor({2, 3}, {1.0, -2.0, 0.5, 0.0, 1.5, -1.0}),
            Tensor({1, 3}, {0.3, -0.2, 0.1}),
            Tensor({2, 3}, {8.0, -8.0, 8.0, 8.0, 8.0, -8.0}), 0.02, 40.0,
            1.0);
  const Tensor theta = eval_theta(layer);
  const Tensor x({1, 2}, {1.0, 2.0});

  Tensor expect({1, 3});
  for (std::size_t k = 0; k < 3; ++k) {
    double acc = 0.0, cmax = 0.0;
    for (std::size_t d = 0; d < 2; ++d) {
      acc += x[d] * theta.at(d, k) * layer.weights.mu.value.at(d, k);
      cmax = std::max(cmax, theta.at(d, k));
    }
    expect[k] = acc + layer.bias.mu.value[k] * cmax;
  }

  const int draws = 10000;
  RngStream noise(13, "ibp-mc-noise");
  Tensor mean({1, 3});
  for (int i = 0; i < draws; ++i) {
    Graph g;
    Binder bind(g);
    LayerBind lb = bind_layer(bind, layer, {});
    NodeId xn = g.constant(x);
    auto fwd = layer_forward_stochastic(bind, xn, lb, layer, 0.1, noise);
    const Tensor& a = g.val(fwd.act);
    for (std::size_t k = 0; k < 3; ++k) mean[k] += a[k] / draws;
  }
  for (std::size_t k = 0; k < 3; ++k)
    CHECK(mean[k] == doctest::Approx(expect[k]).epsilon(0.05));
}

TEST_CASE("expansion count hand traces") {
  // K=6, columns 5 and 6 all-zero, 1-4 nonempty, reserve 3 -> grow 1
  Tensor m1({2, 6}, {1, 1, 0, 1, 0, 0,
                     0, 1, 1, 0, 0, 0});
  CHECK(expansion_count(m1, 3) == 1);

  // all columns nonempty, reserve 2 -> grow 2
  Tensor m2({2, 3}, {1, 1, 1, 0, 0, 1});
  CHECK(expansion_count(m2, 2) == 2);

  // trailing `reserve` columns already empty -> no-op
  Tensor m3({2, 4}, {1, 1, 0, 0, 1, 0, 0, 0});
  CHECK(expansion_count(m3, 2) == 0);

  // an interior empty column does not count when a later column is nonempty
  Tensor m4({2, 4}, {1, 0, 1, 1, 1, 0, 1, 0});
  CHECK(expansion_count(m4, 2) == 2);
}

TEST_CASE("expand grows and leaves original columns bitwise unchanged") {
  RngStream rng(17, "ibp-expand");
  auto layer = IbpLayerPosterior::init(3, 4, 5.0, 0.6, rng);
  const IbpLayerPosterior before = layer;

  Tensor mask({3, 4}, 1.0);  // all nonempty
  RngStream grow(17, "ibp-grow");
  const std::size_t g = expand(layer, mask, 2, 0.6, grow);
  CHECK(g == 2);
  CHECK(layer.width == 6);
  CHECK(layer.weights.mu.value.shape() == std::vector<std::size_t>{3, 6});

  for (std::size_t d = 0; d < 3; ++d)
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(layer.weights.mu.value.at(d, k) ==
            before.weights.mu.value.at(d, k));
      CHECK(layer.weights.raw_sigma.value.at(d, k) ==
            before.weights.raw_sigma.value.at(d, k));
      CHECK(layer.mask_logits.value.at(d, k) ==
            before.mask_logits.value.at(d, k));
    }
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(layer.sticks.raw_a.value[k] == before.sticks.raw_a.value[k]);
    CHECK(layer.sticks.raw_b.value[k] == before.sticks.raw_b.value[k]);
    CHECK(layer.bias.mu.value[k] == before.bias.mu.value[k]);
  }

  // no-op when the trailing reserve columns are empty
  Tensor sparse({3, 6}, 0.0);
  sparse.at(0, 0) = 1.0;
  RngStream grow2(18, "ibp-grow");
  CHECK(expand(layer, sparse, 2, 0.6, grow2) == 0);
  CHECK(layer.width == 6);
}

TEST_CASE("frozen eval-deterministic forward is a pure function") {
  RngStream rng(23, "ibp-pure");
  auto layer = IbpLayerPosterior::init(4, 5, 5.0, 0.6, rng);
  Tensor mask({4, 5});
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < 0.6;
  Tensor x = rng.normal_tensor({3, 4});
  auto run = [&]() {
    Graph g;
    Binder bind(g);
    LayerBind lb = bind_layer(bind, layer, {});
    return g.val(layer_forward_frozen(bind, g.constant(x), lb, layer, mask,
                                      nullptr)
                     .act);
  };
  CHECK(run() == run());
}

TEST_CASE("ordering pressure: later columns are used less under the prior") {
  const double alpha = 5.0;
  const std::size_t k = 50, d = 4;
  RngStream rng(29, "ibp-order");
  auto layer = IbpLayerPosterior::init(d, k, alpha, 0.6, rng);

  const double a = softplus_s(layer.sticks.raw_a.value[0]);
  const double b = softplus_s(layer.sticks.raw_b.value[0]);
  std::vector<double> colmean(k, 0.0);
  RngStream noise(31, "ibp-order-noise");
  for (int s = 0; s < 1000; ++s) {
    Tensor nu({k});
    for (std::size_t i = 0; i < k; ++i) {
      const double u = noise.uniform_open();
      nu[i] = std::pow(1.0 - std::pow(u, 1.0 / b), 1.0 / a);
    }
    Tensor pis = stick_pis(nu);
    for (std::size_t i = 0; i < k; ++i) {
      const double lp = logit_s(std::clamp(pis[i], 1e-12, 1.0 - 1e-12));
      for (std::size_t dd = 0; dd < d; ++dd)
        colmean[i] +=
            sigmoid_s(layer.mask_logits.value.at(dd, i) + lp) / (1000.0 * d);
    }
  }
  std::vector<double> index(k);
  std::iota(index.begin(), index.end(), 0.0);
  CHECK(spearman(colmean, index) < 0.0);
}
