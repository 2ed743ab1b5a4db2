#include "flavars/graph.hpp"

#include <cmath>

namespace flavars {

namespace {
constexpr double kLnEps = 1e-5;  // layer-norm variance epsilon

// tanh-approximation GELU and its derivative
inline double gelu_fwd(double x) {
  const double c = 0.7978845608028654;  // sqrt(2/pi)
  const double u = c * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}
inline double gelu_bwd(double x) {
  const double c = 0.7978845608028654;
  const double u = c * (x + 0.044715 * x * x * x);
  const double t = std::tanh(u);
  const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}
}  // namespace

Var Tape::add(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw TrainError("add: shape mismatch");
  Mat y = value(a) + value(b);
  int ia = a.id, ib = b.id;
  return make(std::move(y), {ia, ib}, [ia, ib](Tape& t, const Node& n) {
    t.grad_slot(ia) += n.grad;
    t.grad_slot(ib) += n.grad;
  });
}

Var Tape::add_rowvec(Var a, Var r) {
  check_same_tape(a);
  check_same_tape(r);
  if (r.rows() != 1 || r.cols() != a.cols())
    throw TrainError("add_rowvec: shape mismatch");
  Mat y = value(a).rowwise() + value(r).row(0);
  int ia = a.id, ir = r.id;
  return make(std::move(y), {ia, ir}, [ia, ir](Tape& t, const Node& n) {
    t.grad_slot(ia) += n.grad;
    t.grad_slot(ir).row(0) += n.grad.colwise().sum();
  });
}

Var Tape::scale(Var a, double c) {
  check_same_tape(a);
  Mat y = value(a) * c;
  int ia = a.id;
  return make(std::move(y), {ia}, [ia, c](Tape& t, const Node& n) {
    t.grad_slot(ia) += c * n.grad;
  });
}

Var Tape::add_const(Var a, Mat m) {
  check_same_tape(a);
  if (m.rows() != a.rows() || m.cols() != a.cols())
    throw TrainError("add_const: shape mismatch");
  Mat y = value(a) + m;
  int ia = a.id;
  return make(std::move(y), {ia}, [ia](Tape& t, const Node& n) {
    t.grad_slot(ia) += n.grad;
  });
}

Var Tape::matmul(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  if (a.cols() != b.rows()) throw TrainError("matmul: inner dim mismatch");
  Mat y = value(a) * value(b);
  int ia = a.id, ib = b.id;
  return make(std::move(y), {ia, ib}, [ia, ib](Tape& t, const Node& n) {
    t.grad_slot(ia).noalias() += n.grad * t.nodes_[ib].value.transpose();
    t.grad_slot(ib).noalias() += t.nodes_[ia].value.transpose() * n.grad;
  });
}

Var Tape::matmul_nt(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  if (a.cols() != b.cols()) throw TrainError("matmul_nt: inner dim mismatch");
  Mat y = value(a) * value(b).transpose();
  int ia = a.id, ib = b.id;
  return make(std::move(y), {ia, ib}, [ia, ib](Tape& t, const Node& n) {
    t.grad_slot(ia).noalias() += n.grad * t.nodes_[ib].value;
    t.grad_slot(ib).noalias() += n.grad.transpose() * t.nodes_[ia].value;
  });
}

Var Tape::matmul_const(Var a, const Mat& m) {
  check_same_tape(a);
  if (a.cols() != m.rows()) throw TrainError("matmul_const: inner dim mismatch");
  Mat y = value(a) * m;
  int ia = a.id;
  Mat mt = m.transpose();
  return make(std::move(y), {ia}, [ia, mt](Tape& t, const Node& n) {
    t.grad_slot(ia).noalias() += n.grad * mt;
  });
}

Var Tape::transpose(Var a) {
  check_same_tape(a);
  Mat y = value(a).transpose();
  int ia = a.id;
  return make(std::move(y), {ia}, [ia](Tape& t, const Node& n) {
    t.grad_slot(ia) += n.grad.transpose();
  });
}

Var Tape::gelu(Var a) {
  check_same_tape(a);
  const Mat& x = value(a);
  Mat y = x.unaryExpr([](double v) { return gelu_fwd(v); });
  int ia = a.id;
  return make(std::move(y), {ia}, [ia](Tape& t, const Node& n) {
    const Mat& x = t.nodes_[ia].value;
    t.grad_slot(ia) += n.grad.cwiseProduct(x.unaryExpr([](double v) { return gelu_bwd(v); }));
  });
}

Var Tape::layer_norm(Var x, Var gamma, Var beta) {
  check_same_tape(x);
  check_same_tape(gamma);
  check_same_tape(beta);
  const Mat& xv = value(x);
  const Eigen::Index T = xv.rows(), W = xv.cols();
  if (gamma.rows() != 1 || gamma.cols() != W || beta.rows() != 1 || beta.cols() != W)
    throw TrainError("layer_norm: affine shape mismatch");
  Mat xhat(T, W);
  Vec inv_std(T);
  Mat y(T, W);
  const auto g_row = value(gamma).row(0);
  const auto b_row = value(beta).row(0);
  for (Eigen::Index i = 0; i < T; ++i) {
    const double mu = xv.row(i).mean();
    const double var = (xv.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + kLnEps);
    xhat.row(i) = (xv.row(i).array() - mu) * inv_std(i);
    y.row(i) = (xhat.row(i).array() * g_row.array()).matrix() + b_row;
  }
  int ix = x.id, ig = gamma.id, ib = beta.id;
  return make(std::move(y), {ix, ig, ib},
              [ix, ig, ib, xhat, inv_std](Tape& t, const Node& n) {
                const Mat& g = n.grad;
                const Eigen::Index T = g.rows(), W = g.cols();
                t.grad_slot(ig).row(0) += g.cwiseProduct(xhat).colwise().sum();
                t.grad_slot(ib).row(0) += g.colwise().sum();
                const auto gamma_row = t.nodes_[ig].value.row(0);
                Mat& gx = t.grad_slot(ix);
                for (Eigen::Index i = 0; i < T; ++i) {
                  Eigen::RowVectorXd dxhat = g.row(i).cwiseProduct(gamma_row);
                  const double m1 = dxhat.mean();
                  const double m2 = dxhat.cwiseProduct(xhat.row(i)).mean();
                  gx.row(i) += inv_std(i) * (dxhat.array() - m1 - xhat.row(i).array() * m2).matrix();
                  (void)W;
                }
              });
}

Var Tape::softmax_rows(Var a) {
  check_same_tape(a);
  const Mat& x = value(a);
  Mat y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mx = x.row(i).maxCoeff();
    Eigen::RowVectorXd e = (x.row(i).array() - mx).exp();
    y.row(i) = e / e.sum();
  }
  int ia = a.id;
  Mat yc = y;
  return make(std::move(y), {ia}, [ia, yc](Tape& t, const Node& n) {
    Mat& gx = t.grad_slot(ia);
    for (Eigen::Index i = 0; i < yc.rows(); ++i) {
      const double dot = n.grad.row(i).dot(yc.row(i));
      gx.row(i) += (yc.row(i).array() * (n.grad.row(i).array() - dot)).matrix();
    }
  });
}

Var Tape::log_softmax_rows(Var a) {
  check_same_tape(a);
  const Mat& x = value(a);
  Mat y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mx = x.row(i).maxCoeff();
    const double lse = std::log((x.row(i).array() - mx).exp().sum()) + mx;
    y.row(i) = x.row(i).array() - lse;
  }
  int ia = a.id;
  Mat softmax = y.array().exp();
  return make(std::move(y), {ia}, [ia, softmax](Tape& t, const Node& n) {
    Mat& gx = t.grad_slot(ia);
    for (Eigen::Index i = 0; i < softmax.rows(); ++i) {
      const double rowsum = n.grad.row(i).sum();
      gx.row(i) += n.grad.row(i) - rowsum * softmax.row(i);
    }
  });
}

Var Tape::nll_rows(Var logp, std::vector<int> targets) {
  check_same_tape(logp);
  if (static_cast<Eigen::Index>(targets.size()) != logp.rows())
    throw TrainError("nll_rows: target count mismatch");
  if (targets.empty()) return scalar(0.0);
  const Mat& lp = value(logp);
  double acc = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || targets[i] >= lp.cols())
      throw TrainError("nll_rows: target out of range");
    acc -= lp(static_cast<Eigen::Index>(i), targets[i]);
  }
  Mat y(1, 1);
  y(0, 0) = acc / static_cast<double>(targets.size());
  int ia = logp.id;
  return make(std::move(y), {ia}, [ia, targets](Tape& t, const Node& n) {
    const double g = n.grad(0, 0) / static_cast<double>(targets.size());
    Mat& gx = t.grad_slot(ia);
    for (std::size_t i = 0; i < targets.size(); ++i)
      gx(static_cast<Eigen::Index>(i), targets[i]) -= g;
  });
}

Var Tape::gather_rows(Var a, std::vector<int> index) {
  check_same_tape(a);
  const Mat& x = value(a);
  Mat y(static_cast<Eigen::Index>(index.size()), x.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= x.rows()) throw TrainError("gather_rows: index out of range");
    y.row(static_cast<Eigen::Index>(i)) = x.row(index[i]);
  }
  int ia = a.id;
  return make(std::move(y), {ia}, [ia, index](Tape& t, const Node& n) {
    Mat& gx = t.grad_slot(ia);
    for (std::size_t i = 0; i < index.size(); ++i)
      gx.row(index[i]) += n.grad.row(static_cast<Eigen::Index>(i));
  });
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw TrainError("concat_rows: empty");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts[0].cols();
  for (Var p : parts) {
    check_same_tape(p);
    if (p.cols() != cols) throw TrainError("concat_rows: col mismatch");
    rows += p.rows();
  }
  Mat y(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (Var p : parts) {
    y.middleRows(at, p.rows()) = value(p);
    ids.push_back(p.id);
    offsets.push_back(at);
    at += p.rows();
  }
  return make(std::move(y), ids, [ids, offsets](Tape& t, const Node& n) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      Mat& gx = t.grad_slot(ids[i]);
      gx += n.grad.middleRows(offsets[i], gx.rows());
    }
  });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw TrainError("concat_cols: empty");
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts[0].rows();
  for (Var p : parts) {
    check_same_tape(p);
    if (p.rows() != rows) throw TrainError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat y(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (Var p : parts) {
    y.middleCols(at, p.cols()) = value(p);
    ids.push_back(p.id);
    offsets.push_back(at);
    at += p.cols();
  }
  return make(std::move(y), ids, [ids, offsets](Tape& t, const Node& n) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      Mat& gx = t.grad_slot(ids[i]);
      gx += n.grad.middleCols(offsets[i], gx.cols());
    }
  });
}

Var Tape::slice_rows(Var a, int start, int n) {
  check_same_tape(a);
  if (start < 0 || n < 0 || start + n > a.rows()) throw TrainError("slice_rows: out of range");
  Mat y = value(a).middleRows(start, n);
  int ia = a.id;
  return make(std::move(y), {ia}, [ia, start, n](Tape& t, const Node& nd) {
    t.grad_slot(ia).middleRows(start, n) += nd.grad;
  });
}

Var Tape::slice_cols(Var a, int start, int n) {
  check_same_tape(a);
  if (start < 0 || n < 0 || start + n > a.cols()) throw TrainError("slice_cols: out of range");
  Mat y = value(a).middleCols(start, n);
  int ia = a.id;
  return make(std::move(y), {ia}, [ia, start, n](Tape& t, const Node& nd) {
    t.grad_slot(ia).middleCols(start, n) += nd.grad;
  });
}

Var Tape::replace_rows(Var x, std::vector<int> positions, Var row) {
  check_same_tape(x);
  check_same_tape(row);
  if (row.rows() != 1 || row.cols() != x.cols())
    throw TrainError("replace_rows: row shape mismatch");
  Mat y = value(x);
  for (int p : positions) {
    if (p < 0 || p >= y.rows()) throw DataError("replace_rows: index out of range");
    y.row(p) = value(row).row(0);
  }
  int ix = x.id, ir = row.id;
  return make(std::move(y), {ix, ir}, [ix, ir, positions](Tape& t, const Node& n) {
    Mat masked_out = n.grad;
    Mat& gr = t.grad_slot(ir);
    for (int p : positions) {
      gr.row(0) += n.grad.row(p);
      masked_out.row(p).setZero();
    }
    t.grad_slot(ix) += masked_out;
  });
}

Var Tape::l2_normalize_rows(Var x) {
  check_same_tape(x);
  const Mat& xv = value(x);
  Mat y(xv.rows(), xv.cols());
  Vec norms(xv.rows());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    const double nrm = xv.row(i).norm();
    if (nrm == 0.0) throw TrainError("l2_normalize_rows: zero-norm row");
    norms(i) = nrm;
    y.row(i) = xv.row(i) / nrm;
  }
  int ix = x.id;
  Mat yc = y;
  return make(std::move(y), {ix}, [ix, yc, norms](Tape& t, const Node& n) {
    Mat& gx = t.grad_slot(ix);
    for (Eigen::Index i = 0; i < yc.rows(); ++i) {
      const double dot = n.grad.row(i).dot(yc.row(i));
      gx.row(i) += (n.grad.row(i) - dot * yc.row(i)) / norms(i);
    }
  });
}

Var Tape::div_by_scalar(Var a, Var s) {
  check_same_tape(a);
  check_same_tape(s);
  if (s.rows() != 1 || s.cols() != 1) throw TrainError("div_by_scalar: scalar expected");
  const double sv = value(s)(0, 0);
  Mat y = value(a) / sv;
  int ia = a.id, is = s.id;
  Mat yc = y;
  return make(std::move(y), {ia, is}, [ia, is, sv, yc](Tape& t, const Node& n) {
    t.grad_slot(ia) += n.grad / sv;
    t.grad_slot(is)(0, 0) -= n.grad.cwiseProduct(yc).sum() / sv;
  });
}

Var Tape::exp_clamp(Var s, double lo, double hi) {
  check_same_tape(s);
  if (s.rows() != 1 || s.cols() != 1) throw TrainError("exp_clamp: scalar expected");
  const double e = std::exp(value(s)(0, 0));
  const double clamped = std::min(std::max(e, lo), hi);
  Mat y(1, 1);
  y(0, 0) = clamped;
  int is = s.id;
  const bool interior = (e > lo && e < hi);
  return make(std::move(y), {is}, [is, e, interior](Tape& t, const Node& n) {
    if (interior) t.grad_slot(is)(0, 0) += n.grad(0, 0) * e;
  });
}

Var Tape::mean_all(Var a) {
  check_same_tape(a);
  Mat y(1, 1);
  y(0, 0) = value(a).mean();
  int ia = a.id;
  const double inv = 1.0 / static_cast<double>(value(a).size());
  return make(std::move(y), {ia}, [ia, inv](Tape& t, const Node& n) {
    t.grad_slot(ia).array() += n.grad(0, 0) * inv;
  });
}

Var Tape::mse_const(Var a, Mat target) {
  check_same_tape(a);
  if (target.rows() != a.rows() || target.cols() != a.cols())
    throw TrainError("mse_const: shape mismatch");
  Mat diff = value(a) - target;
  Mat y(1, 1);
  y(0, 0) = diff.array().square().mean();
  int ia = a.id;
  const double inv = 2.0 / static_cast<double>(diff.size());
  return make(std::move(y), {ia}, [ia, diff, inv](Tape& t, const Node& n) {
    t.grad_slot(ia) += (n.grad(0, 0) * inv) * diff;
  });
}

Var Tape::weighted_sum(const std::vector<Var>& vars, const std::vector<double>& weights) {
  if (vars.size() != weights.size()) throw TrainError("weighted_sum: size mismatch");
  double acc = 0.0;
  std::vector<int> ids;
  for (std::size_t i = 0; i < vars.size(); ++i) {
    check_same_tape(vars[i]);
    if (vars[i].rows() != 1 || vars[i].cols() != 1)
      throw TrainError("weighted_sum: scalars expected");
    acc += weights[i] * vars[i].value()(0, 0);
    ids.push_back(vars[i].id);
  }
  Mat y(1, 1);
  y(0, 0) = acc;
  return make(std::move(y), ids, [ids, weights](Tape& t, const Node& n) {
    for (std::size_t i = 0; i < ids.size(); ++i)
      t.grad_slot(ids[i])(0, 0) += weights[i] * n.grad(0, 0);
  });
}

void Tape::backward(Var root) {
  check_same_tape(root);
  if (root.rows() != 1 || root.cols() != 1)
    throw TrainError("backward: root must be scalar");
  grad_slot(root.id)(0, 0) = 1.0;
  for (int i = root.id; i >= 0; --i) {
    const Node& n = nodes_[i];
    if (n.grad.size() == 0 || !n.back) continue;
    n.back(*this, n);
  }
}

Mat Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

}  // namespace flavars
