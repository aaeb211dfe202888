#include "cle/graph.hpp"

#include <algorithm>
#include <cmath>

#include "cle/kernels.hpp"
#include "cle/special.hpp"

namespace cle {

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::MatMul: return "matmul";
    case Op::Max: return "max";
    case Op::Neg: return "neg";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sigmoid: return "sigmoid";
    case Op::Softplus: return "softplus";
    case Op::Relu: return "relu";
    case Op::PowC: return "powc";
    case Op::Clamp: return "clamp";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::TileRows: return "tile_rows";
    case Op::ColMax: return "colmax";
    case Op::CumSum: return "cumsum";
    case Op::Lgamma: return "lgamma";
    case Op::Digamma: return "digamma";
    case Op::LogLikCat: return "loglik_categorical";
    case Op::BernoulliLL: return "loglik_bernoulli";
  }
  return "?";
}

NodeId Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Graph::check_finite(const Node& n) const {
  if (!n.value.all_finite())
    throw NumericError(std::string("non-finite output of op ") + op_name(n.op));
}

NodeId Graph::leaf(Tensor t, bool requires_grad) {
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(t);
  n.needs_grad = requires_grad;
  check_finite(n);
  return push(std::move(n));
}

NodeId Graph::binary(Op op, NodeId a, NodeId b) {
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  const bool conform = ta.same_shape(tb) || ta.is_scalar() || tb.is_scalar();
  if (op == Op::Max && !ta.same_shape(tb))
    throw ShapeError(std::string("max: shapes must match, got ") +
                     Tensor::shape_str(ta.shape()) + " vs " +
                     Tensor::shape_str(tb.shape()));
  if (!conform)
    throw ShapeError(std::string(op_name(op)) + ": shapes " +
                     Tensor::shape_str(ta.shape()) + " and " +
                     Tensor::shape_str(tb.shape()) +
                     " do not conform (scalar or equal-shape only)");

  Node n;
  n.op = op;
  n.a = a;
  n.b = b;
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  const Tensor& big = ta.is_scalar() ? tb : ta;
  n.value = Tensor(big.shape());
  const std::size_t sz = big.size();
  const bool sa = ta.is_scalar(), sb = tb.is_scalar();
  for (std::size_t i = 0; i < sz; ++i) {
    const double x = ta[sa ? 0 : i];
    const double y = tb[sb ? 0 : i];
    double v = 0.0;
    switch (op) {
      case Op::Add: v = x + y; break;
      case Op::Sub: v = x - y; break;
      case Op::Mul: v = x * y; break;
      case Op::Div: v = x / y; break;
      case Op::Max: v = std::max(x, y); break;
      default: break;
    }
    n.value[i] = v;
  }
  check_finite(n);
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) { return binary(Op::Add, a, b); }
NodeId Graph::sub(NodeId a, NodeId b) { return binary(Op::Sub, a, b); }
NodeId Graph::mul(NodeId a, NodeId b) { return binary(Op::Mul, a, b); }
NodeId Graph::div(NodeId a, NodeId b) { return binary(Op::Div, a, b); }
NodeId Graph::emax(NodeId a, NodeId b) { return binary(Op::Max, a, b); }

NodeId Graph::matmul(NodeId a, NodeId b) {
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  if (ta.shape().size() != 2 || tb.shape().size() != 2 ||
      ta.shape()[1] != tb.shape()[0])
    throw ShapeError("matmul: shapes " + Tensor::shape_str(ta.shape()) +
                     " and " + Tensor::shape_str(tb.shape()) + " do not conform");
  Node n;
  n.op = Op::MatMul;
  n.a = a;
  n.b = b;
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  n.value = Tensor({ta.shape()[0], tb.shape()[1]});
  kernels::matmul(ta.data(), tb.data(), n.value.data(),
                  ta.shape()[0], ta.shape()[1], tb.shape()[1]);
  check_finite(n);
  return push(std::move(n));
}

NodeId Graph::unary(Op op, NodeId a) {
  const Tensor& ta = nodes_[a].value;
  Node n;
  n.op = op;
  n.a = a;
  n.needs_grad = nodes_[a].needs_grad;
  n.value = Tensor(ta.shape());
  for (std::size_t i = 0; i < ta.size(); ++i) {
    const double x = ta[i];
    double v = 0.0;
    switch (op) {
      case Op::Neg: v = -x; break;
      case Op::Exp: v = std::exp(x); break;
      case Op::Log: v = std::log(x); break;
      case Op::Sigmoid: v = sigmoid_s(x); break;
      case Op::Softplus: v = softplus_s(x); break;
      case Op::Relu: v = x > 0.0 ? x : 0.0; break;
      case Op::Lgamma: v = std::lgamma(x); break;
      case Op::Digamma: v = cle::digamma(x); break;
      default: break;
    }
    n.value[i] = v;
  }
  check_finite(n);
  return push(std::move(n));
}

NodeId Graph::neg(NodeId a) { return unary(Op::Neg, a); }
NodeId Graph::exp(NodeId a) { return unary(Op::Exp, a); }
NodeId Graph::log(NodeId a) { return unary(Op::Log, a); }
NodeId Graph::sigmoid(NodeId a) { return unary(Op::Sigmoid, a); }
NodeId Graph::softplus(NodeId a) { return unary(Op::Softplus, a); }
NodeId Graph::relu(NodeId a) { return unary(Op::Relu, a); }
NodeId Graph::lgamma(NodeId a) { return unary(Op::Lgamma, a); }
NodeId Graph::digamma(NodeId a) { return unary(Op::Digamma, a); }

NodeId Graph::powc(NodeId a, double c) {
  const Tensor& ta = nodes_[a].value;
  Node n;
  n.op = Op::PowC;
  n.a = a;
  n.c0 = c;
  n.needs_grad = nodes_[a].needs_grad;
  n.value = Tensor(ta.shape());
  for (std::size_t i = 0; i < ta.size(); ++i) n.value[i] = std::pow(ta[i], c);
  check_finite(n);
  return push(std::move(n));
}

NodeId Graph::clamp(NodeId a, double lo, double hi) {
  const Tensor& ta = nodes_[a].value;
  Node n;
  n.op = Op::Clamp;
  n.a = a;
  n.c0 = lo;
  n.c1 = hi;
  n.needs_grad = nodes_[a].needs_grad;
  n.value = Tensor(ta.shape());
  for (std::size_t i = 0; i < ta.size(); ++i)
    n.value[i] = std::min(hi, std::max(lo, ta[i]));
  check_finite(n);
  return push(std::move(n));
}

NodeId Graph::sum(NodeId a) {
  const Tensor& ta = nodes_[a].value;
  Node n;
  n.op = Op::Sum;
  n.a = a;
  n.needs_grad = nodes_[a].needs_grad;
  double acc = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) acc += ta[i];
  n.value = Tensor::scalar(acc);
  check_finite(n);
  return push(std::move(n));
}

NodeId Graph::mean(NodeId a) {
  const Tensor& ta = nodes_[a].value;
  Node n;
  n.op = Op::Mean;
  n.a = a;
  n.needs_grad = nodes_[a].needs_grad;
  double acc = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) acc += ta[i];
  n.value = Tensor::scalar(acc / static_cast<double>(ta.size()));
  check_finite(n);
  return push(std::move(n));
}

NodeId Graph::tile_rows(NodeId a, std::size_t rows) {
  const Tensor& ta = nodes_[a].value;
  if (ta.shape().size() > 2 || (ta.shape().size() == 2 && ta.shape()[0] != 1))
    throw ShapeError("tile_rows: expected row vector, got " +
                     Tensor::shape_str(ta.shape()));
  const std::size_t k = ta.size();
  Node n;
  n.op = Op::TileRows;
  n.a = a;
  n.n0 = rows;
  n.needs_grad = nodes_[a].needs_grad;
  n.value = Tensor({rows, k});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < k; ++j) n.value[r * k + j] = ta[j];
  check_finite(n);
  return push(std::move(n));
}

NodeId Graph::colmax(NodeId a) {
  const Tensor& ta = nodes_[a].value;
  if (ta.shape().size() != 2)
    throw ShapeError("colmax: expected matrix, got " +
                     Tensor::shape_str(ta.shape()));
  const std::size_t d = ta.shape()[0], k = ta.shape()[1];
  Node n;
  n.op = Op::ColMax;
  n.a = a;
  n.needs_grad = nodes_[a].needs_grad;
  n.value = Tensor({1, k});
  n.argmax.assign(k, 0);
  for (std::size_t j = 0; j < k; ++j) {
    double best = ta[j];
    std::size_t bi = 0;
    for (std::size_t r = 1; r < d; ++r) {
      if (ta[r * k + j] > best) {
        best = ta[r * k + j];
        bi = r;
      }
    }
    n.value[j] = best;
    n.argmax[j] = bi;
  }
  check_finite(n);
  return push(std::move(n));
}

NodeId Graph::cumsum(NodeId a) {
  const Tensor& ta = nodes_[a].value;
  if (ta.shape().size() > 2 || (ta.shape().size() == 2 && ta.shape()[0] != 1))
    throw ShapeError("cumsum: expected vector, got " +
                     Tensor::shape_str(ta.shape()));
  Node n;
  n.op = Op::CumSum;
  n.a = a;
  n.needs_grad = nodes_[a].needs_grad;
  n.value = Tensor(ta.shape());
  double acc = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    acc += ta[i];
    n.value[i] = acc;
  }
  check_finite(n);
  return push(std::move(n));
}

NodeId Graph::loglik_categorical(NodeId logits, std::vector<int> labels) {
  const Tensor& ta = nodes_[logits].value;
  if (ta.shape().size() != 2 || ta.shape()[0] != labels.size())
    throw ShapeError("loglik_categorical: logits " +
                     Tensor::shape_str(ta.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  const std::size_t nr = ta.shape()[0], c = ta.shape()[1];
  Node n;
  n.op = Op::LogLikCat;
  n.a = logits;
  n.needs_grad = nodes_[logits].needs_grad;
  n.labels = std::move(labels);
  double acc = 0.0;
  for (std::size_t r = 0; r < nr; ++r) {
    const double* row = ta.data() + r * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double lse = 0.0;
    for (std::size_t j = 0; j < c; ++j) lse += std::exp(row[j] - mx);
    acc += row[n.labels[r]] - mx - std::log(lse);
  }
  n.value = Tensor::scalar(acc);
  check_finite(n);
  return push(std::move(n));
}

NodeId Graph::loglik_bernoulli(NodeId logits, Tensor targets) {
  const Tensor& ta = nodes_[logits].value;
  if (!ta.same_shape(targets))
    throw ShapeError("loglik_bernoulli: logits " +
                     Tensor::shape_str(ta.shape()) + " vs targets " +
                     Tensor::shape_str(targets.shape()));
  Node n;
  n.op = Op::BernoulliLL;
  n.a = logits;
  n.needs_grad = nodes_[logits].needs_grad;
  double acc = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i)
    acc += targets[i] * ta[i] - softplus_s(ta[i]);
  n.aux = std::move(targets);
  n.value = Tensor::scalar(acc);
  check_finite(n);
  return push(std::move(n));
}

void Graph::accum(NodeId id, const Tensor& g) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return;
  if (!n.grad_live) {
    n.grad = Tensor(n.value.shape());
    n.grad_live = true;
  }
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

// Accumulate g into a possibly-scalar operand (reduces by summation).
void Graph::accum_broadcast(NodeId id, const Tensor& g) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return;
  if (n.value.is_scalar() && g.size() > 1) {
    double acc = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) acc += g[i];
    accum(id, Tensor::scalar(acc));
  } else {
    accum(id, g);
  }
}

void Graph::backward(NodeId loss) {
  if (!nodes_[loss].value.is_scalar())
    throw ShapeError("backward: loss must be scalar, got " +
                     Tensor::shape_str(nodes_[loss].value.shape()));
  for (auto& n : nodes_) {
    n.grad = Tensor();
    n.grad_live = false;
  }
  nodes_[loss].grad = Tensor(nodes_[loss].value.shape(), 1.0);
  nodes_[loss].grad_live = true;
  for (NodeId id = loss; id >= 0; --id) {
    if (!nodes_[id].grad_live || !nodes_[id].needs_grad) continue;
    backprop_node(id);
  }
}

void Graph::backprop_node(NodeId id) {
  Node& n = nodes_[id];
  const Tensor& g = n.grad;
  const Tensor& v = n.value;
  switch (n.op) {
    case Op::Leaf:
      break;
    case Op::Add: {
      accum_broadcast(n.a, g);
      accum_broadcast(n.b, g);
      break;
    }
    case Op::Sub: {
      accum_broadcast(n.a, g);
      Tensor gb(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] = -g[i];
      accum_broadcast(n.b, gb);
      break;
    }
    case Op::Mul: {
      const Tensor& ta = nodes_[n.a].value;
      const Tensor& tb = nodes_[n.b].value;
      const bool sa = ta.is_scalar(), sb = tb.is_scalar();
      Tensor ga(g.shape()), gb(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] = g[i] * tb[sb ? 0 : i];
        gb[i] = g[i] * ta[sa ? 0 : i];
      }
      accum_broadcast(n.a, ga);
      accum_broadcast(n.b, gb);
      break;
    }
    case Op::Div: {
      const Tensor& ta = nodes_[n.a].value;
      const Tensor& tb = nodes_[n.b].value;
      const bool sa = ta.is_scalar(), sb = tb.is_scalar();
      Tensor ga(g.shape()), gb(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = tb[sb ? 0 : i];
        ga[i] = g[i] / y;
        gb[i] = -g[i] * ta[sa ? 0 : i] / (y * y);
      }
      accum_broadcast(n.a, ga);
      accum_broadcast(n.b, gb);
      break;
    }
    case Op::Max: {
      const Tensor& ta = nodes_[n.a].value;
      const Tensor& tb = nodes_[n.b].value;
      Tensor ga(g.shape()), gb(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (ta[i] >= tb[i]) ga[i] = g[i];
        else gb[i] = g[i];
      }
      accum(n.a, ga);
      accum(n.b, gb);
      break;
    }
    case Op::MatMul: {
      const Tensor& ta = nodes_[n.a].value;
      const Tensor& tb = nodes_[n.b].value;
      const std::size_t nr = ta.shape()[0], kk = ta.shape()[1], mm = tb.shape()[1];
      if (nodes_[n.a].needs_grad) {
        Tensor ga(ta.shape());
        kernels::matmul_nt(g.data(), tb.data(), ga.data(), nr, mm, kk);
        accum(n.a, ga);
      }
      if (nodes_[n.b].needs_grad) {
        Tensor gb(tb.shape());
        kernels::matmul_tn(ta.data(), g.data(), gb.data(), kk, nr, mm);
        accum(n.b, gb);
      }
      break;
    }
    case Op::Neg: {
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = -g[i];
      accum(n.a, ga);
      break;
    }
    case Op::Exp: {
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * v[i];
      accum(n.a, ga);
      break;
    }
    case Op::Log: {
      const Tensor& ta = nodes_[n.a].value;
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] / ta[i];
      accum(n.a, ga);
      break;
    }
    case Op::Sigmoid: {
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i)
        ga[i] = g[i] * v[i] * (1.0 - v[i]);
      accum(n.a, ga);
      break;
    }
    case Op::Softplus: {
      const Tensor& ta = nodes_[n.a].value;
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i)
        ga[i] = g[i] * sigmoid_s(ta[i]);
      accum(n.a, ga);
      break;
    }
    case Op::Relu: {
      const Tensor& ta = nodes_[n.a].value;
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i)
        ga[i] = ta[i] > 0.0 ? g[i] : 0.0;
      accum(n.a, ga);
      break;
    }
    case Op::PowC: {
      const Tensor& ta = nodes_[n.a].value;
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i)
        ga[i] = g[i] * n.c0 * std::pow(ta[i], n.c0 - 1.0);
      accum(n.a, ga);
      break;
    }
    case Op::Clamp: {
      const Tensor& ta = nodes_[n.a].value;
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i)
        ga[i] = (ta[i] >= n.c0 && ta[i] <= n.c1) ? g[i] : 0.0;
      accum(n.a, ga);
      break;
    }
    case Op::Sum: {
      const Tensor& ta = nodes_[n.a].value;
      Tensor ga(ta.shape(), g.value());
      accum(n.a, ga);
      break;
    }
    case Op::Mean: {
      const Tensor& ta = nodes_[n.a].value;
      Tensor ga(ta.shape(), g.value() / static_cast<double>(ta.size()));
      accum(n.a, ga);
      break;
    }
    case Op::TileRows: {
      const Tensor& ta = nodes_[n.a].value;
      const std::size_t k = ta.size();
      Tensor ga(ta.shape());
      for (std::size_t r = 0; r < n.n0; ++r)
        for (std::size_t j = 0; j < k; ++j) ga[j] += g[r * k + j];
      accum(n.a, ga);
      break;
    }
    case Op::ColMax: {
      const Tensor& ta = nodes_[n.a].value;
      const std::size_t k = ta.shape()[1];
      Tensor ga(ta.shape());
      for (std::size_t j = 0; j < k; ++j) ga[n.argmax[j] * k + j] = g[j];
      accum(n.a, ga);
      break;
    }
    case Op::CumSum: {
      const Tensor& ta = nodes_[n.a].value;
      Tensor ga(ta.shape());
      double acc = 0.0;
      for (std::size_t i = ta.size(); i-- > 0;) {
        acc += g[i];
        ga[i] = acc;
      }
      accum(n.a, ga);
      break;
    }
    case Op::Lgamma: {
      const Tensor& ta = nodes_[n.a].value;
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i)
        ga[i] = g[i] * cle::digamma(ta[i]);
      accum(n.a, ga);
      break;
    }
    case Op::Digamma: {
      const Tensor& ta = nodes_[n.a].value;
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i)
        ga[i] = g[i] * cle::trigamma(ta[i]);
      accum(n.a, ga);
      break;
    }
    case Op::LogLikCat: {
      const Tensor& ta = nodes_[n.a].value;
      const std::size_t nr = ta.shape()[0], c = ta.shape()[1];
      const double gs = g.value();
      Tensor ga(ta.shape());
      for (std::size_t r = 0; r < nr; ++r) {
        const double* row = ta.data() + r * c;
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double lse = 0.0;
        for (std::size_t j = 0; j < c; ++j) lse += std::exp(row[j] - mx);
        for (std::size_t j = 0; j < c; ++j) {
          const double p = std::exp(row[j] - mx) / lse;
          ga[r * c + j] =
              gs * ((static_cast<int>(j) == n.labels[r] ? 1.0 : 0.0) - p);
        }
      }
      accum(n.a, ga);
      break;
    }
    case Op::BernoulliLL: {
      const Tensor& ta = nodes_[n.a].value;
      const double gs = g.value();
      Tensor ga(ta.shape());
      for (std::size_t i = 0; i < ta.size(); ++i)
        ga[i] = gs * (n.aux[i] - sigmoid_s(ta[i]));
      accum(n.a, ga);
      break;
    }
  }
}

const Tensor& Graph::grad(NodeId id) const {
  if (!nodes_[id].grad_live)
    throw std::runtime_error("grad: node has no gradient (run backward first)");
  return nodes_[id].grad;
}

bool Graph::has_grad(NodeId id) const { return nodes_[id].grad_live; }

}  // namespace cle
