#include "doctest.h"

#include <cmath>
#include <functional>
#include <vector>

#include "cle/graph.hpp"
#include "cle/rng.hpp"

using namespace cle;

namespace {

// Central-difference gradient of a scalar-valued builder w.r.t. one input.
Tensor fd_grad(const std::function<double(const std::vector<Tensor>&)>& f,
               std::vector<Tensor> inputs, std::size_t which,
               double h = 1e-5) {
  Tensor g(inputs[which].shape());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double keep = inputs[which][i];
    inputs[which][i] = keep + h;
    const double up = f(inputs);
    inputs[which][i] = keep - h;
    const double dn = f(inputs);
    inputs[which][i] = keep;
    g[i] = (up - dn) / (2.0 * h);
  }
  return g;
}

void check_close(const Tensor& a, const Tensor& b, double tol = 1e-4) {
  REQUIRE(a.same_shape(b));
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double rel = std::fabs(a[i] - b[i]) /
                       std::max({1.0, std::fabs(a[i]), std::fabs(b[i])});
    CHECK(rel < tol);
  }
}

Tensor rand_tensor(RngStream& rng, std::vector<std::size_t> shape, double lo,
                   double hi) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = lo + (hi - lo) * rng.uniform();
  return t;
}

}  // namespace

TEST_CASE("forward basics") {
  Graph g;
  NodeId a = g.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  NodeId b = g.constant(Tensor({2, 1}, {1, 1}));
  const Tensor& c = g.val(g.matmul(a, b));
  CHECK(c.at(0, 0) == 3.0);
  CHECK(c.at(1, 0) == 7.0);

  CHECK(g.val(g.sigmoid(g.constant(0.0))).value() == 0.5);

  // stable softplus at -50: log(1+x) = x to ~1e-22 relative error here,
  // while the naive log(1+exp(-50)) underflows to exactly 0.
  const double ref = std::exp(-50.0);
  const double got = g.val(g.softplus(g.constant(-50.0))).value();
  CHECK(got > 0.0);
  CHECK(std::fabs(got - ref) / ref < 1e-12);
}

TEST_CASE("hand gradients") {
  {
    Graph g;
    NodeId x = g.leaf(Tensor::scalar(3.0));
    g.backward(g.mul(x, x));
    CHECK(g.grad(x).value() == doctest::Approx(6.0));
  }
  {
    Graph g;
    NodeId w = g.leaf(Tensor::scalar(0.0));
    NodeId loss = g.sigmoid(g.mul(w, g.constant(2.0)));
    g.backward(loss);
    CHECK(g.grad(w).value() == doctest::Approx(0.5));
  }
}

TEST_CASE("finite differences across the op set") {
  RngStream rng(101, "fd");

  SUBCASE("matmul + relu + sum") {
    Tensor a = rand_tensor(rng, {3, 4}, -2, 2);
    Tensor b = rand_tensor(rng, {4, 2}, -2, 2);
    auto f = [](const std::vector<Tensor>& in) {
      Graph g;
      NodeId x = g.leaf(in[0]), y = g.leaf(in[1]);
      return g.val(g.sum(g.relu(g.matmul(x, y)))).value();
    };
    Graph g;
    NodeId x = g.leaf(a), y = g.leaf(b);
    g.backward(g.sum(g.relu(g.matmul(x, y))));
    check_close(g.grad(x), fd_grad(f, {a, b}, 0));
    check_close(g.grad(y), fd_grad(f, {a, b}, 1));
  }

  SUBCASE("div, log, exp, powc") {
    Tensor a = rand_tensor(rng, {2, 3}, 0.5, 2.0);
    Tensor b = rand_tensor(rng, {2, 3}, 0.5, 2.0);
    auto f = [](const std::vector<Tensor>& in) {
      Graph g;
      NodeId x = g.leaf(in[0]), y = g.leaf(in[1]);
      NodeId e = g.add(g.div(g.log(x), y), g.exp(g.powc(y, 1.5)));
      return g.val(g.sum(e)).value();
    };
    Graph g;
    NodeId x = g.leaf(a), y = g.leaf(b);
    g.backward(g.sum(g.add(g.div(g.log(x), y), g.exp(g.powc(y, 1.5)))));
    check_close(g.grad(x), fd_grad(f, {a, b}, 0));
    check_close(g.grad(y), fd_grad(f, {a, b}, 1));
  }

  SUBCASE("mean, tile_rows, colmax, cumsum") {
    Tensor v = rand_tensor(rng, {1, 4}, -2, 2);
    Tensor m = rand_tensor(rng, {3, 4}, -2, 2);
    auto f = [](const std::vector<Tensor>& in) {
      Graph g;
      NodeId a = g.leaf(in[0]), b = g.leaf(in[1]);
      NodeId t = g.mul(g.tile_rows(a, 3), b);
      NodeId c = g.colmax(t);
      return g.val(g.add(g.mean(t), g.sum(g.cumsum(c)))).value();
    };
    Graph g;
    NodeId a = g.leaf(v), b = g.leaf(m);
    NodeId t = g.mul(g.tile_rows(a, 3), b);
    g.backward(g.add(g.mean(t), g.sum(g.cumsum(g.colmax(t)))));
    check_close(g.grad(a), fd_grad(f, {v, m}, 0));
    check_close(g.grad(b), fd_grad(f, {v, m}, 1));
  }

  SUBCASE("lgamma, digamma") {
    Tensor a = rand_tensor(rng, {5}, 0.5, 4.0);
    auto f = [](const std::vector<Tensor>& in) {
      Graph g;
      NodeId x = g.leaf(in[0]);
      return g.val(g.sum(g.add(g.lgamma(x), g.digamma(x)))).value();
    };
    Graph g;
    NodeId x = g.leaf(a);
    g.backward(g.sum(g.add(g.lgamma(x), g.digamma(x))));
    check_close(g.grad(x), fd_grad(f, {a}, 0));
  }

  SUBCASE("categorical log likelihood") {
    Tensor logits = rand_tensor(rng, {4, 3}, -2, 2);
    std::vector<int> y = {0, 2, 1, 2};
    auto f = [&](const std::vector<Tensor>& in) {
      Graph g;
      NodeId x = g.leaf(in[0]);
      return g.val(g.loglik_categorical(x, y)).value();
    };
    Graph g;
    NodeId x = g.leaf(logits);
    g.backward(g.loglik_categorical(x, y));
    check_close(g.grad(x), fd_grad(f, {logits}, 0));
  }

  SUBCASE("bernoulli log likelihood") {
    Tensor logits = rand_tensor(rng, {3, 4}, -2, 2);
    Tensor targets = rand_tensor(rng, {3, 4}, 0.0, 1.0);
    auto f = [&](const std::vector<Tensor>& in) {
      Graph g;
      NodeId x = g.leaf(in[0]);
      return g.val(g.loglik_bernoulli(x, targets)).value();
    };
    Graph g;
    NodeId x = g.leaf(logits);
    g.backward(g.loglik_bernoulli(x, targets));
    check_close(g.grad(x), fd_grad(f, {logits}, 0));
  }

  SUBCASE("elementwise max and clamp") {
    Tensor a = rand_tensor(rng, {2, 3}, -2, 2);
    Tensor b = rand_tensor(rng, {2, 3}, -2, 2);
    auto f = [](const std::vector<Tensor>& in) {
      Graph g;
      NodeId x = g.leaf(in[0]), y = g.leaf(in[1]);
      return g.val(g.sum(g.clamp(g.emax(x, y), -1.5, 1.5))).value();
    };
    Graph g;
    NodeId x = g.leaf(a), y = g.leaf(b);
    g.backward(g.sum(g.clamp(g.emax(x, y), -1.5, 1.5)));
    check_close(g.grad(x), fd_grad(f, {a, b}, 0));
    check_close(g.grad(y), fd_grad(f, {a, b}, 1));
  }

  SUBCASE("scalar broadcast") {
    Tensor a = rand_tensor(rng, {}, -2, 2);
    Tensor b = rand_tensor(rng, {3, 2}, -2, 2);
    auto f = [](const std::vector<Tensor>& in) {
      Graph g;
      NodeId s = g.leaf(in[0]), m = g.leaf(in[1]);
      return g.val(g.sum(g.mul(g.sub(m, s), g.add(m, s)))).value();
    };
    Graph g;
    NodeId s = g.leaf(a), m = g.leaf(b);
    g.backward(g.sum(g.mul(g.sub(m, s), g.add(m, s))));
    check_close(g.grad(s), fd_grad(f, {a, b}, 0));
    check_close(g.grad(m), fd_grad(f, {a, b}, 1));
  }
}

TEST_CASE("gradient accumulates across fan-out") {
  Graph g;
  NodeId x = g.leaf(Tensor::scalar(2.0));
  NodeId y = g.add(g.mul(x, x), g.mul(g.constant(3.0), x));  // x^2 + 3x
  g.backward(y);
  CHECK(g.grad(x).value() == doctest::Approx(7.0));
}

TEST_CASE("linearity of gradients") {
  RngStream rng(7, "lin");
  Tensor t = rand_tensor(rng, {2, 2}, -2, 2);
  const double a = 1.7, b = -0.6;

  auto grad_of = [&](double ca, double cb) {
    Graph g;
    NodeId x = g.leaf(t);
    NodeId f = g.sum(g.sigmoid(x));
    NodeId h = g.sum(g.mul(x, x));
    g.backward(g.add(g.mul(g.constant(ca), f), g.mul(g.constant(cb), h)));
    return g.grad(x);
  };
  Tensor gf = grad_of(1.0, 0.0), gh = grad_of(0.0, 1.0), gc = grad_of(a, b);
  for (std::size_t i = 0; i < gc.size(); ++i)
    CHECK(gc[i] == doctest::Approx(a * gf[i] + b * gh[i]).epsilon(1e-12));
}

TEST_CASE("determinism: identical graphs give bitwise-identical gradients") {
  RngStream rng(13, "det");
  Tensor t = rand_tensor(rng, {4, 4}, -2, 2);
  auto run = [&]() {
    Graph g;
    NodeId x = g.leaf(t);
    g.backward(g.sum(g.sigmoid(g.matmul(x, x))));
    return g.grad(x);
  };
  CHECK(run() == run());
}

TEST_CASE("error paths") {
  Graph g;
  NodeId a = g.leaf(Tensor({2, 3}, 1.0));
  NodeId b = g.leaf(Tensor({3, 3}, 1.0));
  CHECK_THROWS_AS((void)g.add(a, b), ShapeError);
  CHECK_THROWS_AS((void)g.matmul(a, a), ShapeError);
  CHECK_THROWS_AS(g.backward(a), ShapeError);  // non-scalar loss
  CHECK_THROWS_AS((void)g.log(g.constant(-1.0)), NumericError);
  CHECK_THROWS_AS((void)g.div(g.constant(1.0), g.constant(0.0)), NumericError);
  // shape errors name the op
  try {
    (void)g.add(a, b);
    CHECK(false);
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("add") != std::string::npos);
  }
}
