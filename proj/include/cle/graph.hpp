#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cle/tensor.hpp"

namespace cle {

using NodeId = std::int32_t;

enum class Op : std::uint8_t {
  Leaf,
  Add, Sub, Mul, Div, MatMul, Max,
  Neg, Exp, Log, Sigmoid, Softplus, Relu, PowC, Clamp,
  Sum, Mean, TileRows, ColMax, CumSum,
  Lgamma, Digamma,
  LogLikCat, BernoulliLL,
};

const char* op_name(Op op);

// Reverse-mode tape over dense double tensors. Nodes are appended in
// topological order; forward values are computed eagerly. The graph is
// rebuilt per minibatch.
class Graph {
 public:
  NodeId leaf(Tensor t, bool requires_grad = true);
  NodeId constant(Tensor t) { return leaf(std::move(t), false); }
  NodeId constant(double v) { return leaf(Tensor::scalar(v), false); }

  // Binary ops support equal shapes or scalar-with-array broadcasting.
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId matmul(NodeId a, NodeId b);
  NodeId emax(NodeId a, NodeId b);  // elementwise max, equal shapes

  NodeId neg(NodeId a);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId softplus(NodeId a);
  NodeId relu(NodeId a);
  NodeId powc(NodeId a, double c);
  NodeId clamp(NodeId a, double lo, double hi);

  NodeId sum(NodeId a);
  NodeId mean(NodeId a);
  // Repeats a length-K vector (shape {K} or {1,K}) into an {n,K} matrix.
  NodeId tile_rows(NodeId a, std::size_t n);
  // Column-wise max of a {D,K} matrix -> {1,K}; gradient routes to the argmax.
  NodeId colmax(NodeId a);
  // Inclusive prefix sum over a vector.
  NodeId cumsum(NodeId a);

  NodeId lgamma(NodeId a);
  NodeId digamma(NodeId a);

  // Sum over rows of log softmax(logits)[label]; logits {N,C}.
  NodeId loglik_categorical(NodeId logits, std::vector<int> labels);
  // Sum of Bernoulli log likelihood with logits; targets in [0,1], same shape.
  NodeId loglik_bernoulli(NodeId logits, Tensor targets);

  void backward(NodeId loss);

  const Tensor& val(NodeId id) const { return nodes_[id].value; }
  const Tensor& grad(NodeId id) const;
  bool has_grad(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Op op = Op::Leaf;
    NodeId a = -1, b = -1;
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    bool grad_live = false;
    double c0 = 0.0, c1 = 0.0;       // scalar aux (PowC exponent, Clamp bounds)
    std::size_t n0 = 0;              // integer aux (TileRows count)
    std::vector<int> labels;         // LogLikCat
    std::vector<std::size_t> argmax; // ColMax
    Tensor aux;                      // BernoulliLL targets
  };

  NodeId push(Node n);
  NodeId binary(Op op, NodeId a, NodeId b);
  NodeId unary(Op op, NodeId a);
  void check_finite(const Node& n) const;
  void accum(NodeId id, const Tensor& g);
  void accum_broadcast(NodeId id, const Tensor& g);
  void backprop_node(NodeId id);

  std::vector<Node> nodes_;
};

}  // namespace cle
