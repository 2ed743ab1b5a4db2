#include "flavars/objectives.hpp"

#include <cmath>
#include <limits>

namespace flavars {

namespace {
std::vector<int> identity_targets(Eigen::Index n) {
  std::vector<int> t(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) t[static_cast<std::size_t>(i)] = static_cast<int>(i);
  return t;
}
}  // namespace

Var contrastive_loss(Tape& tape, Var emb_a, Var emb_b, Var tau) {
  const Eigen::Index n = emb_a.rows();
  if (n < 2) throw TrainError("contrastive_loss: batch must have at least 2 rows");
  if (emb_b.rows() != n || emb_b.cols() != emb_a.cols())
    throw TrainError("contrastive_loss: embedding shape mismatch");
  if (!emb_a.value().allFinite() || !emb_b.value().allFinite())
    throw TrainError("contrastive_loss: non-finite input");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(emb_a.value().row(i).norm() - 1.0) > 1e-6 ||
        std::abs(emb_b.value().row(i).norm() - 1.0) > 1e-6)
      throw TrainError("contrastive_loss: rows must be unit-norm");
  }
  Var sim = tape.div_by_scalar(tape.matmul_nt(emb_a, emb_b), tau);
  const auto targets = identity_targets(n);
  Var fwd = tape.nll_rows(tape.log_softmax_rows(sim), targets);
  Var bwd = tape.nll_rows(tape.log_softmax_rows(tape.transpose(sim)), targets);
  return tape.weighted_sum({fwd, bwd}, {0.5, 0.5});
}

double contrastive_loss(const Mat& emb_a, const Mat& emb_b, double tau) {
  Tape tape;
  return contrastive_loss(tape, tape.constant(emb_a), tape.constant(emb_b), tape.scalar(tau))
      .scalar();
}

Var masked_prediction_loss(Tape& tape, Var logits, const std::vector<int>& targets,
                           const MaskPlan& plan) {
  if (plan.empty()) {
    if (targets.empty()) return tape.scalar(0.0);
    throw TrainError("masked_prediction_loss: targets given for empty plan");
  }
  if (static_cast<std::size_t>(logits.rows()) != plan.size() || targets.size() != plan.size())
    throw TrainError("masked_prediction_loss: logits rows must correspond to plan positions");
  return tape.nll_rows(tape.log_softmax_rows(logits), targets);
}

double masked_prediction_loss(const Mat& logits, const std::vector<int>& targets,
                              const MaskPlan& plan) {
  Tape tape;
  return masked_prediction_loss(tape, tape.constant(logits), targets, plan).scalar();
}

Var itm_loss(Tape& tape, Var match_logits, const std::vector<int>& labels) {
  if (match_logits.rows() == 0) throw TrainError("itm_loss: empty batch");
  if (match_logits.cols() != 2) throw TrainError("itm_loss: expected [N x 2] logits");
  if (static_cast<std::size_t>(match_logits.rows()) != labels.size())
    throw TrainError("itm_loss: label count mismatch");
  return tape.nll_rows(tape.log_softmax_rows(match_logits), labels);
}

double itm_loss(const Mat& match_logits, const std::vector<int>& labels) {
  Tape tape;
  return itm_loss(tape, tape.constant(match_logits), labels).scalar();
}

Var total_loss(Tape& tape, const std::vector<Var>& components,
               const std::vector<double>& weights, const std::vector<std::string>& names) {
  if (components.size() != weights.size() || components.size() != names.size())
    throw TrainError("total_loss: size mismatch");
  for (std::size_t i = 0; i < components.size(); ++i)
    if (!std::isfinite(components[i].scalar()))
      throw TrainError("total_loss: non-finite component '" + names[i] + "'");
  return tape.weighted_sum(components, weights);
}

double total_loss(const LossBreakdown& parts, const LossWeights& weights) {
  const std::vector<std::pair<std::string, std::pair<double, double>>> items = {
      {"mim", {parts.mim, weights.mim}},
      {"mlm", {parts.mlm, weights.mlm}},
      {"itm", {parts.itm, weights.itm}},
      {"contrastive_it", {parts.contrastive_it, weights.contrastive_it}},
      {"contrastive_il", {parts.contrastive_il, weights.contrastive_il}},
      {"contrastive_tl", {parts.contrastive_tl, weights.contrastive_tl}},
  };
  double acc = 0.0;
  for (const auto& [name, cw] : items) {
    if (!std::isfinite(cw.first))
      throw TrainError("total_loss: non-finite component '" + name + "'");
    acc += cw.second * cw.first;
  }
  return acc;
}

PatchCodebook fit_patch_codebook(const Mat& patches, int k, Rng& rng) {
  const Eigen::Index m = patches.rows();
  if (k < 1) throw ConfigError("fit_patch_codebook: k must be >= 1");
  if (m < k) throw DataError("fit_patch_codebook: fewer patches than codes");
  const Eigen::Index dim = patches.cols();

  // k-means++ seeding
  Mat centroids(k, dim);
  std::vector<double> dist2(static_cast<std::size_t>(m), std::numeric_limits<double>::max());
  Eigen::Index first = static_cast<Eigen::Index>(rng.bounded(static_cast<std::uint64_t>(m)));
  centroids.row(0) = patches.row(first);
  for (int c = 1; c < k; ++c) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      const double d = (patches.row(i) - centroids.row(c - 1)).squaredNorm();
      if (d < dist2[static_cast<std::size_t>(i)]) dist2[static_cast<std::size_t>(i)] = d;
      sum += dist2[static_cast<std::size_t>(i)];
    }
    Eigen::Index pick = 0;
    if (sum > 0.0) {
      const double r = rng.uniform() * sum;
      double acc = 0.0;
      for (Eigen::Index i = 0; i < m; ++i) {
        acc += dist2[static_cast<std::size_t>(i)];
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.bounded(static_cast<std::uint64_t>(m)));
    }
    centroids.row(c) = patches.row(pick);
  }

  // Lloyd iterations, cap 50, early stop on a stable assignment. The
  // assignment step runs as one GEMM; squared distances are compared via
  // ||c||^2 - 2 x.c, ties to the lowest centroid index.
  std::vector<int> assign(static_cast<std::size_t>(m), -1);
  PatchCodebook cb{centroids};
  for (int iter = 0; iter < 50; ++iter) {
    bool changed = false;
    const Mat dots = patches * cb.centroids.transpose();
    const Vec cnorm = cb.centroids.rowwise().squaredNorm();
    for (Eigen::Index i = 0; i < m; ++i) {
      int a = 0;
      double best = cnorm(0) - 2.0 * dots(i, 0);
      for (int c = 1; c < k; ++c) {
        const double d = cnorm(c) - 2.0 * dots(i, c);
        if (d < best) {
          best = d;
          a = c;
        }
      }
      if (a != assign[static_cast<std::size_t>(i)]) {
        assign[static_cast<std::size_t>(i)] = a;
        changed = true;
      }
    }
    if (!changed) break;
    Mat sums = Mat::Zero(k, dim);
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < m; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += patches.row(i);
      counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])]++;
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        cb.centroids.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
      } else {
        // Re-seed an empty cluster at the point farthest from its centroid.
        Eigen::Index far = 0;
        double best = -1.0;
        for (Eigen::Index i = 0; i < m; ++i) {
          const double d =
              (patches.row(i) - cb.centroids.row(assign[static_cast<std::size_t>(i)])).squaredNorm();
          if (d > best) {
            best = d;
            far = i;
          }
        }
        cb.centroids.row(c) = patches.row(far);
      }
    }
  }
  return cb;
}

int quantize_patch(const Eigen::RowVectorXd& patch, const PatchCodebook& codebook) {
  if (patch.cols() != codebook.centroids.cols())
    throw DataError("quantize_patch: dimension mismatch");
  int best = 0;
  double best_d = (patch - codebook.centroids.row(0)).squaredNorm();
  for (int c = 1; c < codebook.size(); ++c) {
    const double d = (patch - codebook.centroids.row(c)).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

}  // namespace flavars
