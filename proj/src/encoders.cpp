#include "flavars/encoders.hpp"

#include <cmath>

namespace flavars {

namespace {

constexpr double kMaskLogit = -1e9;

Mat normal_init(Rng& rng, int rows, int cols, double stddev) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, stddev);
  return m;
}

}  // namespace

namespace detail {

Var Linear::apply(Binding& g, Var x) const {
  Var y = g.tape().matmul(x, g.use(*w));
  if (b != nullptr) y = g.tape().add_rowvec(y, g.use(*b));
  return y;
}

Var LayerNorm::apply(Binding& g, Var x) const {
  return g.tape().layer_norm(x, g.use(*gamma), g.use(*beta));
}

Var Attention::apply(Binding& g, Var x, const Mat& mask) const {
  Tape& t = g.tape();
  const int width = static_cast<int>(x.cols());
  const int head_dim = width / heads;
  Var qs = q.apply(g, x);
  Var ks = k.apply(g, x);
  Var vs = v.apply(g, x);
  std::vector<Var> head_out;
  head_out.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var qh = t.slice_cols(qs, h * head_dim, head_dim);
    Var kh = t.slice_cols(ks, h * head_dim, head_dim);
    Var vh = t.slice_cols(vs, h * head_dim, head_dim);
    Var scores = t.scale(t.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(head_dim)));
    if (mask.size() > 0) scores = t.add_const(scores, mask);
    head_out.push_back(t.matmul(t.softmax_rows(scores), vh));
  }
  return o.apply(g, t.concat_cols(head_out));
}

Var TransformerBlock::apply(Binding& g, Var x, const Mat& mask) const {
  Tape& t = g.tape();
  x = t.add(x, attn.apply(g, ln1.apply(g, x), mask));
  Var h = fc2.apply(g, g.tape().gelu(fc1.apply(g, ln2.apply(g, x))));
  return t.add(x, h);
}

Linear make_linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng,
                   bool bias) {
  Linear l;
  l.w = &store.add(name + ".w", normal_init(rng, in, out, 0.02));
  if (bias) l.b = &store.add(name + ".b", Mat::Zero(1, out), /*no_decay=*/true);
  return l;
}

LayerNorm make_layer_norm(ParamStore& store, const std::string& name, int width) {
  LayerNorm ln;
  ln.gamma = &store.add(name + ".g", Mat::Ones(1, width), /*no_decay=*/true);
  ln.beta = &store.add(name + ".b", Mat::Zero(1, width), /*no_decay=*/true);
  return ln;
}

TransformerBlock make_block(ParamStore& store, const std::string& name, int width, int heads,
                            Rng& rng) {
  TransformerBlock blk;
  blk.ln1 = make_layer_norm(store, name + ".ln1", width);
  blk.attn.q = make_linear(store, name + ".attn.q", width, width, rng);
  blk.attn.k = make_linear(store, name + ".attn.k", width, width, rng);
  blk.attn.v = make_linear(store, name + ".attn.v", width, width, rng);
  blk.attn.o = make_linear(store, name + ".attn.o", width, width, rng);
  blk.attn.heads = heads;
  blk.ln2 = make_layer_norm(store, name + ".ln2", width);
  blk.fc1 = make_linear(store, name + ".mlp.fc1", width, 4 * width, rng);
  blk.fc2 = make_linear(store, name + ".mlp.fc2", 4 * width, width, rng);
  return blk;
}

}  // namespace detail

Mat pad_attention_mask(const std::vector<std::uint8_t>& pad) {
  const auto n = static_cast<Eigen::Index>(pad.size());
  Mat mask = Mat::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    if (pad[static_cast<std::size_t>(j)]) mask.col(j).setConstant(kMaskLogit);
  return mask;
}

// ---------------------------------------------------------------------------
// VisionEncoder

VisionEncoder::VisionEncoder(const VisionConfig& config, Rng& init_rng) : config_(config) {
  config_.validate();
  const int w = config_.width;
  patch_embed_ = detail::make_linear(store_, "patch_embed", config_.patch_dim(), w, init_rng);
  cls_ = &store_.add("cls", normal_init(init_rng, 1, w, 0.02), /*no_decay=*/true);
  pos_ = &store_.add("pos", normal_init(init_rng, 1 + config_.num_patches(), w, 0.02),
                     /*no_decay=*/true);
  mask_token_ = &store_.add("mask_token", normal_init(init_rng, 1, w, 0.02), /*no_decay=*/true);
  for (int d = 0; d < config_.depth; ++d)
    blocks_.push_back(detail::make_block(store_, "blocks." + std::to_string(d), w, config_.heads,
                                         init_rng));
  final_ln_ = detail::make_layer_norm(store_, "ln_final", w);
  proj_ = &store_.add("proj", normal_init(init_rng, w, config_.proj_dim, 0.02));
}

VisionEncoder::GraphOut VisionEncoder::forward(Binding& g, const Image& image,
                                               const MaskPlan* mask_plan) const {
  if (image.h != config_.image_size || image.w != config_.image_size ||
      image.c != config_.channels)
    throw ConfigError("VisionEncoder: image dimensions do not match config");
  Tape& t = g.tape();
  Mat raw = patchify(image, config_.patch_size);
  Var patches = t.constant(raw / 127.5 + Mat::Constant(raw.rows(), raw.cols(), -1.0));
  Var embedded = patch_embed_.apply(g, patches);
  if (mask_plan != nullptr && !mask_plan->empty())
    embedded = apply_image_mask(t, embedded, *mask_plan, g.use(*mask_token_));
  Var x = t.concat_rows({g.use(*cls_), embedded});
  x = t.add(x, g.use(*pos_));
  for (const auto& blk : blocks_) x = blk.apply(g, x, Mat());
  Var states = final_ln_.apply(g, x);
  Var pooled = t.l2_normalize_rows(t.matmul(t.slice_rows(states, 0, 1), g.use(*proj_)));
  return {states, pooled};
}

EmbeddingSet VisionEncoder::encode(const Image& image) const {
  Tape tape;
  Binding g(tape);
  auto out = forward(g, image);
  return {out.token_states.value(), out.pooled.value().row(0).transpose()};
}

// ---------------------------------------------------------------------------
// TextEncoder

TextEncoder::TextEncoder(const TextConfig& config, Rng& init_rng) : config_(config) {
  config_.validate();
  const int w = config_.width;
  tok_embed_ = &store_.add("tok_embed", normal_init(init_rng, config_.vocab_size, w, 0.02));
  pos_ = &store_.add("pos", normal_init(init_rng, config_.max_len, w, 0.02), /*no_decay=*/true);
  for (int d = 0; d < config_.depth; ++d)
    blocks_.push_back(detail::make_block(store_, "blocks." + std::to_string(d), w, config_.heads,
                                         init_rng));
  final_ln_ = detail::make_layer_norm(store_, "ln_final", w);
  proj_ = &store_.add("proj", normal_init(init_rng, w, config_.proj_dim, 0.02));
}

TextEncoder::GraphOut TextEncoder::forward(Binding& g, const TokenSequence& tokens) const {
  tokens.validate(config_.vocab_size);
  const auto n = static_cast<int>(tokens.size());
  if (n < 1 || n > config_.max_len) throw DataError("TextEncoder: sequence length out of range");
  Tape& t = g.tape();
  Var x = t.gather_rows(g.use(*tok_embed_), tokens.ids);
  x = t.add(x, t.slice_rows(g.use(*pos_), 0, n));
  const Mat mask = pad_attention_mask(tokens.pad);
  for (const auto& blk : blocks_) x = blk.apply(g, x, mask);
  Var states = final_ln_.apply(g, x);
  Var pooled = t.l2_normalize_rows(t.matmul(t.slice_rows(states, 0, 1), g.use(*proj_)));
  return {states, pooled};
}

EmbeddingSet TextEncoder::encode(const TokenSequence& tokens) const {
  Tape tape;
  Binding g(tape);
  auto out = forward(g, tokens);
  return {out.token_states.value(), out.pooled.value().row(0).transpose()};
}

// ---------------------------------------------------------------------------
// FusionEncoder

FusionEncoder::FusionEncoder(const FusionConfig& config, int image_width, int text_width,
                             int max_image_tokens, int max_text_tokens, Rng& init_rng)
    : config_(config),
      image_width_(image_width),
      text_width_(text_width),
      max_image_tokens_(max_image_tokens),
      max_text_tokens_(max_text_tokens) {
  config_.validate();
  const int w = config_.width;
  image_proj_ = detail::make_linear(store_, "image_proj", image_width, w, init_rng);
  text_proj_ = detail::make_linear(store_, "text_proj", text_width, w, init_rng);
  cls_ = &store_.add("cls", normal_init(init_rng, 1, w, 0.02), /*no_decay=*/true);
  pos_ = &store_.add("pos",
                     normal_init(init_rng, 1 + max_image_tokens + max_text_tokens, w, 0.02),
                     /*no_decay=*/true);
  for (int d = 0; d < config_.depth; ++d)
    blocks_.push_back(detail::make_block(store_, "blocks." + std::to_string(d), w, config_.heads,
                                         init_rng));
  final_ln_ = detail::make_layer_norm(store_, "ln_final", w);
}

FusionEncoder::GraphOut FusionEncoder::forward(Binding& g, Var image_states, Var text_states,
                                               const std::vector<std::uint8_t>& text_pad) const {
  if (image_states.cols() != image_width_ || text_states.cols() != text_width_)
    throw ConfigError("FusionEncoder: input width mismatch");
  const auto ti = static_cast<int>(image_states.rows());
  const auto tt = static_cast<int>(text_states.rows());
  if (ti > max_image_tokens_ || tt > max_text_tokens_)
    throw ConfigError("FusionEncoder: sequence longer than configured maximum");
  if (!text_pad.empty() && static_cast<int>(text_pad.size()) != tt)
    throw ConfigError("FusionEncoder: pad mask length mismatch");
  Tape& t = g.tape();
  Var img = image_proj_.apply(g, image_states);
  Var txt = text_proj_.apply(g, text_states);
  Var x = t.concat_rows({g.use(*cls_), img, txt});
  Var pos = g.use(*pos_);
  x = t.add(x, t.concat_rows({t.slice_rows(pos, 0, 1 + ti),
                              t.slice_rows(pos, 1 + max_image_tokens_, tt)}));
  const int total = 1 + ti + tt;
  Mat mask;
  if (!text_pad.empty()) {
    mask = Mat::Zero(total, total);
    for (int j = 0; j < tt; ++j)
      if (text_pad[static_cast<std::size_t>(j)])
        mask.col(1 + ti + j).setConstant(kMaskLogit);
  }
  for (const auto& blk : blocks_) x = blk.apply(g, x, mask);
  Var states = final_ln_.apply(g, x);
  return {states, t.slice_rows(states, 0, 1)};
}

FusedSet FusionEncoder::encode(const Mat& image_states, const Mat& text_states,
                               const std::vector<std::uint8_t>& text_pad) const {
  Tape tape;
  Binding g(tape);
  auto out = forward(g, tape.constant(image_states), tape.constant(text_states), text_pad);
  return {out.token_states.value(), out.cls.value().row(0).transpose()};
}

// ---------------------------------------------------------------------------
// LocationEncoder

LocationEncoder::LocationEncoder(const LocationConfig& config, Rng& init_rng) : config_(config) {
  config_.validate();
  int in = config_.basis_count();
  for (int d = 0; d < config_.hidden_depth; ++d) {
    layers_.push_back(detail::make_linear(store_, "mlp." + std::to_string(d), in,
                                          config_.hidden_width, init_rng));
    in = config_.hidden_width;
  }
  proj_ = &store_.add("proj", normal_init(init_rng, in, config_.proj_dim, 0.02));
}

Var LocationEncoder::forward(Binding& g, const GeoCoordinate& coord) const {
  Tape& t = g.tape();
  const auto feats = spherical_harmonic_features(coord, config_.max_degree);
  Mat x(1, static_cast<Eigen::Index>(feats.size()));
  for (std::size_t i = 0; i < feats.size(); ++i) x(0, static_cast<Eigen::Index>(i)) = feats[i];
  Var h = t.constant(std::move(x));
  for (const auto& layer : layers_) h = t.gelu(layer.apply(g, h));
  return t.l2_normalize_rows(t.matmul(h, g.use(*proj_)));
}

Vec LocationEncoder::encode(const GeoCoordinate& coord) const {
  Tape tape;
  Binding g(tape);
  return forward(g, coord).value().row(0).transpose();
}

}  // namespace flavars
