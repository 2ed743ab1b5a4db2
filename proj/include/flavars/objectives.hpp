#pragma once

#include <string>
#include <vector>

#include "flavars/graph.hpp"
#include "flavars/masking.hpp"
#include "flavars/rng.hpp"

namespace flavars {

struct LossWeights {
  double mim = 1.0;
  double mlm = 1.0;
  double itm = 1.0;
  double contrastive_it = 1.0;
  double contrastive_il = 1.0;
  // Optional text-location alignment term, off by default.
  double contrastive_tl = 0.0;

  void validate() const {
    for (double w : {mim, mlm, itm, contrastive_it, contrastive_il, contrastive_tl})
      if (w < 0.0) throw ConfigError("LossWeights: weights must be nonnegative");
  }
};

// Learnable temperature shared by the contrastive losses. The raw parameter
// is log_tau; exp(log_tau) is clamped into [tau_min, tau_max] before use.
struct TemperatureParam {
  double init = 0.07;
  double tau_min = 0.01;
  double tau_max = 1.0;

  void validate() const {
    if (!(tau_min > 0.0 && tau_min <= tau_max))
      throw ConfigError("TemperatureParam: need 0 < tau_min <= tau_max");
    if (init < tau_min || init > tau_max)
      throw ConfigError("TemperatureParam: init outside clamp range");
  }
};

struct LossBreakdown {
  double mim = 0.0;
  double mlm = 0.0;
  double itm = 0.0;
  double contrastive_it = 0.0;
  double contrastive_il = 0.0;
  double contrastive_tl = 0.0;
  double total = 0.0;
};

// Symmetric InfoNCE over matched rows of two unit-norm embedding matrices:
// the mean over both softmax directions of -log softmax of the matched
// similarity, with logits scaled by 1/tau.
Var contrastive_loss(Tape& tape, Var emb_a, Var emb_b, Var tau);
double contrastive_loss(const Mat& emb_a, const Mat& emb_b, double tau);

// Mean cross-entropy over masked positions; logits rows correspond to plan
// positions. An empty plan yields exactly 0 with zero gradient.
Var masked_prediction_loss(Tape& tape, Var logits, const std::vector<int>& targets,
                           const MaskPlan& plan);
double masked_prediction_loss(const Mat& logits, const std::vector<int>& targets,
                              const MaskPlan& plan);

// Two-class cross-entropy over the fused [CLS] head. labels[i] is 1 for a
// matched pair, 0 for a shuffled negative.
Var itm_loss(Tape& tape, Var match_logits, const std::vector<int>& labels);
double itm_loss(const Mat& match_logits, const std::vector<int>& labels);

Var total_loss(Tape& tape, const std::vector<Var>& components,
               const std::vector<double>& weights, const std::vector<std::string>& names);
double total_loss(const LossBreakdown& parts, const LossWeights& weights);

// k-means codebook over raw patch pixel vectors; generates the discrete
// targets for masked-image modeling.
struct PatchCodebook {
  Mat centroids;  // [K x patch_dim]
  int size() const { return static_cast<int>(centroids.rows()); }
};

// k-means++ init, Lloyd iterations capped at 50, deterministic given rng.
PatchCodebook fit_patch_codebook(const Mat& patches, int k, Rng& rng);

// argmin Euclidean distance; ties resolve to the lowest centroid index.
int quantize_patch(const Eigen::RowVectorXd& patch, const PatchCodebook& codebook);

}  // namespace flavars
