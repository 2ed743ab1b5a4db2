#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "flavars/common.hpp"

namespace flavars {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

class Tape;

// Handle to a node on a Tape. Values are matrices; scalars are 1x1.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
  const Mat& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
};

// Reverse-mode tape. Creation order is topological order: every op only
// references already-existing nodes, so the backward pass is a single
// reverse sweep. Gradients are allocated lazily; nodes never reached from
// the root keep an empty gradient.
class Tape {
 public:
  Var constant(Mat value) { return make(std::move(value), {}, nullptr); }

  Var scalar(double v) {
    Mat m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
  }

  // y = a + b (same shape)
  Var add(Var a, Var b);
  // y = a + r broadcast over rows; r is [1 x W]
  Var add_rowvec(Var a, Var r);
  // y = c * a, constant c
  Var scale(Var a, double c);
  // y = a + m, constant matrix m (used for additive attention masks)
  Var add_const(Var a, Mat m);
  // y = a * b
  Var matmul(Var a, Var b);
  // y = a * b^T
  Var matmul_nt(Var a, Var b);
  // y = a * m, constant matrix m (e.g. fixed bilinear upsampling)
  Var matmul_const(Var a, const Mat& m);
  // y = a^T
  Var transpose(Var a);
  // row-wise tanh-approximation GELU
  Var gelu(Var a);
  // row-wise layer norm with affine gamma/beta [1 x W], eps 1e-5
  Var layer_norm(Var x, Var gamma, Var beta);
  // row-wise softmax
  Var softmax_rows(Var a);
  // row-wise log-softmax
  Var log_softmax_rows(Var a);
  // scalar: -(1/M) sum_i logp(i, target[i]); empty targets -> constant 0
  Var nll_rows(Var logp, std::vector<int> targets);
  // y[i] = a[index[i]] (gather rows; backward scatter-adds)
  Var gather_rows(Var a, std::vector<int> index);
  Var concat_rows(const std::vector<Var>& parts);
  Var concat_cols(const std::vector<Var>& parts);
  Var slice_rows(Var a, int start, int n);
  Var slice_cols(Var a, int start, int n);
  // masked fill: rows listed in positions are replaced by row [1 x W]
  Var replace_rows(Var x, std::vector<int> positions, Var row);
  // row-wise x / ||x||_2
  Var l2_normalize_rows(Var x);
  // y = a / s, scalar Var s
  Var div_by_scalar(Var a, Var s);
  // y = clamp(exp(s), lo, hi), scalar Var; zero gradient when clamped
  Var exp_clamp(Var s, double lo, double hi);
  // scalar mean of all entries
  Var mean_all(Var a);
  // scalar mean squared error against a constant target
  Var mse_const(Var a, Mat target);
  // y = sum_i w[i] * v[i] over scalar Vars
  Var weighted_sum(const std::vector<Var>& vars, const std::vector<double>& weights);

  void backward(Var root);

  const Mat& value(Var v) const { return nodes_[v.id].value; }
  // Gradient of the last backward() root w.r.t. v; empty-safe (returns a
  // zero matrix of the right shape when the node was never reached).
  Mat grad(Var v) const;
  bool grad_reached(Var v) const { return nodes_[v.id].grad.size() > 0; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Tape&, const Node&)> back;
    std::vector<int> parents;
  };

  Var make(Mat value, std::vector<int> parents,
           std::function<void(Tape&, const Node&)> back) {
    nodes_.push_back(Node{std::move(value), Mat(), std::move(back), std::move(parents)});
    return Var{this, static_cast<int>(nodes_.size() - 1)};
  }

  Mat& grad_slot(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void check_same_tape(Var v) const {
    if (v.tape != this) throw TrainError("graph op across tapes");
  }

  std::vector<Node> nodes_;

  friend struct Var;
};

inline const Mat& Var::value() const { return tape->value(*this); }
inline double Var::scalar() const {
  const Mat& m = value();
  if (m.size() != 1) throw TrainError("Var::scalar on non-scalar node");
  return m(0, 0);
}

}  // namespace flavars
