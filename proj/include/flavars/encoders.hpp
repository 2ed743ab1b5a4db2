#pragma once

#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include "flavars/graph.hpp"
#include "flavars/image.hpp"
#include "flavars/masking.hpp"
#include "flavars/rng.hpp"
#include "flavars/sph_harm.hpp"
#include "flavars/tokens.hpp"

namespace flavars {

struct VisionConfig {
  int image_size = 32;
  int patch_size = 8;
  int channels = 3;
  int width = 64;
  int depth = 2;
  int heads = 4;
  int proj_dim = 32;

  int grid() const { return image_size / patch_size; }
  int num_patches() const { return grid() * grid(); }
  int patch_dim() const { return patch_size * patch_size * channels; }
  void validate() const {
    if (image_size <= 0 || patch_size <= 0 || channels <= 0 || width <= 0 || depth <= 0 ||
        heads <= 0 || proj_dim <= 0)
      throw ConfigError("VisionConfig: all fields must be positive");
    if (image_size % patch_size != 0)
      throw ConfigError("VisionConfig: image_size must be divisible by patch_size");
    if (width % heads != 0) throw ConfigError("VisionConfig: width must be divisible by heads");
  }
};

struct TextConfig {
  int vocab_size = 64;
  int max_len = 16;
  int width = 64;
  int depth = 2;
  int heads = 4;
  int proj_dim = 32;

  void validate() const {
    if (vocab_size < tok::kNumSpecials)
      throw ConfigError("TextConfig: vocab_size must hold all special tokens");
    if (max_len < 2) throw ConfigError("TextConfig: max_len must be >= 2");
    if (width <= 0 || depth <= 0 || heads <= 0 || proj_dim <= 0)
      throw ConfigError("TextConfig: all fields must be positive");
    if (width % heads != 0) throw ConfigError("TextConfig: width must be divisible by heads");
  }
};

struct FusionConfig {
  int width = 64;
  int depth = 1;
  int heads = 4;

  void validate() const {
    if (width <= 0 || depth <= 0 || heads <= 0)
      throw ConfigError("FusionConfig: all fields must be positive");
    if (width % heads != 0) throw ConfigError("FusionConfig: width must be divisible by heads");
  }
};

struct LocationConfig {
  int max_degree = 3;
  int hidden_width = 64;
  int hidden_depth = 2;
  int proj_dim = 32;

  int basis_count() const { return (max_degree + 1) * (max_degree + 1); }
  void validate() const {
    if (max_degree < 0) throw ConfigError("LocationConfig: max_degree must be >= 0");
    if (hidden_width <= 0 || hidden_depth <= 0 || proj_dim <= 0)
      throw ConfigError("LocationConfig: all fields must be positive");
  }
};

// Per-token hidden states plus the pooled, projected, unit-norm embedding.
struct EmbeddingSet {
  Mat token_states;  // [num_tokens x width]
  Vec pooled;        // [proj_dim], ||.||_2 = 1
};

// Fusion output: no unit-norm contract on the [CLS] vector.
struct FusedSet {
  Mat token_states;
  Vec cls;
};

struct Param {
  std::string name;
  Mat value;
  bool no_decay = false;
};

// Ordered, stable-address parameter container. Registration order defines
// checkpoint layout.
class ParamStore {
 public:
  Param& add(std::string name, Mat value, bool no_decay = false) {
    params_.push_back(Param{std::move(name), std::move(value), no_decay});
    Param& p = params_.back();
    // persistent state stays float32-representable
    p.value = p.value.unaryExpr([](double x) { return quantize_f32(x); });
    return p;
  }
  std::deque<Param>& params() { return params_; }
  const std::deque<Param>& params() const { return params_; }

 private:
  std::deque<Param> params_;
};

// Maps parameters onto tape leaves for one forward/backward pass. Reusing
// the same leaf for every use of a parameter makes gradients accumulate
// across the whole batch automatically.
class Binding {
 public:
  explicit Binding(Tape& tape) : tape_(&tape) {}

  Var use(const Param& p) {
    auto it = leaves_.find(&p);
    if (it != leaves_.end()) return it->second;
    Var v = tape_->constant(p.value);
    leaves_.emplace(&p, v);
    return v;
  }

  // Gradient of the backward root w.r.t. p; zero if p was never used or
  // never reached.
  Mat grad_of(const Param& p) const {
    auto it = leaves_.find(&p);
    if (it == leaves_.end()) return Mat::Zero(p.value.rows(), p.value.cols());
    return tape_->grad(it->second);
  }

  Tape& tape() const { return *tape_; }

 private:
  Tape* tape_;
  std::unordered_map<const Param*, Var> leaves_;
};

namespace detail {

struct Linear {
  Param* w = nullptr;
  Param* b = nullptr;  // optional
  Var apply(Binding& g, Var x) const;
};

struct LayerNorm {
  Param* gamma = nullptr;
  Param* beta = nullptr;
  Var apply(Binding& g, Var x) const;
};

struct Attention {
  Linear q, k, v, o;
  int heads = 1;
  // mask: empty, or [T x T] additive mask (0 attendable, -1e9 blocked)
  Var apply(Binding& g, Var x, const Mat& mask) const;
};

struct TransformerBlock {
  LayerNorm ln1, ln2;
  Attention attn;
  Linear fc1, fc2;
  Var apply(Binding& g, Var x, const Mat& mask) const;
};

Linear make_linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng,
                   bool bias = true);
LayerNorm make_layer_norm(ParamStore& store, const std::string& name, int width);
TransformerBlock make_block(ParamStore& store, const std::string& name, int width, int heads,
                            Rng& rng);

}  // namespace detail

// ViT over non-overlapping patches with a [CLS] token. Pixel values are
// mapped to [-1, 1] before the patch projection. Masked-image modeling
// substitutes the learned mask token after the patch projection, before
// positional embeddings are added.
class VisionEncoder {
 public:
  VisionEncoder(const VisionConfig& config, Rng& init_rng);

  struct GraphOut {
    Var token_states;  // [1+P x width]
    Var pooled;        // [1 x proj_dim], unit-norm
  };
  GraphOut forward(Binding& g, const Image& image, const MaskPlan* mask_plan = nullptr) const;

  EmbeddingSet encode(const Image& image) const;

  const VisionConfig& config() const { return config_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  const Param& mask_token() const { return *mask_token_; }

 private:
  VisionConfig config_;
  ParamStore store_;
  detail::Linear patch_embed_;
  Param* cls_ = nullptr;
  Param* pos_ = nullptr;
  Param* mask_token_ = nullptr;
  std::vector<detail::TransformerBlock> blocks_;
  detail::LayerNorm final_ln_;
  Param* proj_ = nullptr;
};

// Token transformer; position 0 is expected to be [CLS] (the tokenizer
// guarantees it). Padding positions are attention-masked exactly.
class TextEncoder {
 public:
  TextEncoder(const TextConfig& config, Rng& init_rng);

  struct GraphOut {
    Var token_states;
    Var pooled;
  };
  GraphOut forward(Binding& g, const TokenSequence& tokens) const;

  EmbeddingSet encode(const TokenSequence& tokens) const;

  const TextConfig& config() const { return config_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

 private:
  TextConfig config_;
  ParamStore store_;
  Param* tok_embed_ = nullptr;
  Param* pos_ = nullptr;
  std::vector<detail::TransformerBlock> blocks_;
  detail::LayerNorm final_ln_;
  Param* proj_ = nullptr;
};

// FLAVA-style fusion: both unimodal token-state sequences are projected to
// the fusion width, a fusion [CLS] is prepended, and the concatenation runs
// through a transformer. Output length = image tokens + text tokens + 1.
class FusionEncoder {
 public:
  FusionEncoder(const FusionConfig& config, int image_width, int text_width, int max_image_tokens,
                int max_text_tokens, Rng& init_rng);

  struct GraphOut {
    Var token_states;
    Var cls;  // [1 x width]
  };
  // text_pad marks padding positions of the text sequence (may be empty).
  GraphOut forward(Binding& g, Var image_states, Var text_states,
                   const std::vector<std::uint8_t>& text_pad) const;

  FusedSet encode(const Mat& image_states, const Mat& text_states,
                  const std::vector<std::uint8_t>& text_pad) const;

  const FusionConfig& config() const { return config_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

 private:
  FusionConfig config_;
  int image_width_, text_width_;
  int max_image_tokens_, max_text_tokens_;
  ParamStore store_;
  detail::Linear image_proj_, text_proj_;
  Param* cls_ = nullptr;
  Param* pos_ = nullptr;
  std::vector<detail::TransformerBlock> blocks_;
  detail::LayerNorm final_ln_;
};

// MLP over the spherical-harmonic basis, projected to the shared embedding
// space and L2-normalized.
class LocationEncoder {
 public:
  LocationEncoder(const LocationConfig& config, Rng& init_rng);

  Var forward(Binding& g, const GeoCoordinate& coord) const;
  Vec encode(const GeoCoordinate& coord) const;

  const LocationConfig& config() const { return config_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

 private:
  LocationConfig config_;
  ParamStore store_;
  std::vector<detail::Linear> layers_;
  Param* proj_ = nullptr;
};

// Additive attention mask with blocked columns at pad positions.
Mat pad_attention_mask(const std::vector<std::uint8_t>& pad);

}  // namespace flavars
