#pragma once

#include <array>
#include <vector>

#include "flavars/graph.hpp"
#include "flavars/rng.hpp"
#include "flavars/tokens.hpp"

namespace flavars {

struct MaskingConfig {
  double image_mask_ratio = 0.4;
  double text_mask_prob = 0.15;
  // BERT-style corruption split: replace-with-[MASK], replace-with-random, keep.
  std::array<double, 3> mlm_actions{0.8, 0.1, 0.1};

  void validate() const {
    if (image_mask_ratio < 0.0 || image_mask_ratio > 1.0)
      throw ConfigError("MaskingConfig: image_mask_ratio out of [0,1]");
    if (text_mask_prob < 0.0 || text_mask_prob > 1.0)
      throw ConfigError("MaskingConfig: text_mask_prob out of [0,1]");
    const double s = mlm_actions[0] + mlm_actions[1] + mlm_actions[2];
    if (std::abs(s - 1.0) > 1e-9)
      throw ConfigError("MaskingConfig: mlm_actions must sum to 1");
  }
};

enum class MaskAction : std::uint8_t { Mask = 0, Random = 1, Keep = 2 };

// Sorted, duplicate-free corruption plan. Image plans use action Mask only.
struct MaskPlan {
  std::vector<int> positions;
  std::vector<MaskAction> actions;

  bool empty() const { return positions.empty(); }
  std::size_t size() const { return positions.size(); }
};

// Exactly round(ratio * num_patches) distinct positions (round half away
// from zero), uniform without replacement.
MaskPlan sample_image_mask(int num_patches, double ratio, Rng& rng);

// Each non-special, non-pad position is selected independently with
// probability prob, then corrupted per the action split. Returns the plan
// and the corrupted sequence; target ids come from the original sequence.
std::pair<MaskPlan, TokenSequence> sample_text_mask(const TokenSequence& tokens,
                                                    double prob,
                                                    const std::array<double, 3>& actions,
                                                    int vocab_size, Rng& rng);

// Replaces planned rows of the patch-embedding matrix with the shared
// learned mask token; all other rows pass through bit-identically.
Var apply_image_mask(Tape& tape, Var patch_embeddings, const MaskPlan& plan, Var mask_token);
Mat apply_image_mask(const Mat& patch_embeddings, const MaskPlan& plan, const Mat& mask_token);

}  // namespace flavars
