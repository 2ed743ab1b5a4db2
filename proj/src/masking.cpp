#include "flavars/masking.hpp"

#include <cmath>

namespace flavars {

MaskPlan sample_image_mask(int num_patches, double ratio, Rng& rng) {
  if (num_patches < 1) throw ConfigError("sample_image_mask: num_patches < 1");
  if (ratio < 0.0 || ratio > 1.0) throw ConfigError("sample_image_mask: ratio out of [0,1]");
  const auto count = static_cast<std::size_t>(std::llround(ratio * num_patches));
  MaskPlan plan;
  const auto idx = rng.sample_without_replacement(static_cast<std::size_t>(num_patches), count);
  plan.positions.assign(idx.begin(), idx.end());
  plan.actions.assign(plan.positions.size(), MaskAction::Mask);
  return plan;
}

std::pair<MaskPlan, TokenSequence> sample_text_mask(const TokenSequence& tokens,
                                                    double prob,
                                                    const std::array<double, 3>& actions,
                                                    int vocab_size, Rng& rng) {
  if (prob < 0.0 || prob > 1.0) throw ConfigError("sample_text_mask: prob out of [0,1]");
  MaskPlan plan;
  TokenSequence corrupted = tokens;
  const int n_regular = vocab_size - tok::kNumSpecials;
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    if (tokens.pad[i] || tokens.ids[i] < tok::kNumSpecials) continue;
    if (!rng.bernoulli(prob)) continue;
    const double u = rng.uniform();
    MaskAction action;
    if (u < actions[0]) {
      action = MaskAction::Mask;
      corrupted.ids[i] = tok::kMask;
    } else if (u < actions[0] + actions[1]) {
      action = MaskAction::Random;
      if (n_regular <= 0) throw ConfigError("sample_text_mask: vocabulary has no regular tokens");
      corrupted.ids[i] = tok::kNumSpecials + static_cast<int>(rng.bounded(n_regular));
    } else {
      action = MaskAction::Keep;
    }
    plan.positions.push_back(static_cast<int>(i));
    plan.actions.push_back(action);
  }
  return {plan, corrupted};
}

Var apply_image_mask(Tape& tape, Var patch_embeddings, const MaskPlan& plan, Var mask_token) {
  if (plan.empty()) return patch_embeddings;
  return tape.replace_rows(patch_embeddings, plan.positions, mask_token);
}

Mat apply_image_mask(const Mat& patch_embeddings, const MaskPlan& plan, const Mat& mask_token) {
  Mat out = patch_embeddings;
  for (int p : plan.positions) {
    if (p < 0 || p >= out.rows()) throw DataError("apply_image_mask: index out of range");
    out.row(p) = mask_token.row(0);
  }
  return out;
}

}  // namespace flavars
