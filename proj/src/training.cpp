#include "flavars/training.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <unordered_map>

#include <json.hpp>

#include "flavars/configio.hpp"

namespace flavars {

using nlohmann::json;

void ModelConfig::validate() const {
  vision.validate();
  text.validate();
  fusion.validate();
  location.validate();
  temperature.validate();
  if (codebook_size < 1) throw ConfigError("ModelConfig: codebook_size must be >= 1");
  if (mim_mode != "codebook" && mim_mode != "pixel")
    throw ConfigError("ModelConfig: mim_mode must be 'codebook' or 'pixel'");
  if (vision.proj_dim != text.proj_dim || vision.proj_dim != location.proj_dim)
    throw ConfigError("ModelConfig: proj_dim must match across encoders");
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng init = fork_rng(seed, "init", 0);
  vision_ = std::make_unique<VisionEncoder>(config_.vision, init);
  text_ = std::make_unique<TextEncoder>(config_.text, init);
  fusion_ = std::make_unique<FusionEncoder>(config_.fusion, config_.vision.width,
                                            config_.text.width,
                                            1 + config_.vision.num_patches(),
                                            config_.text.max_len, init);
  location_ = std::make_unique<LocationEncoder>(config_.location, init);
  const int mim_out = config_.mim_mode == "codebook" ? config_.codebook_size
                                                     : config_.vision.patch_dim();
  mim_head_ = detail::make_linear(heads_, "mim_head", config_.vision.width, mim_out, init);
  mlm_head_ = detail::make_linear(heads_, "mlm_head", config_.text.width,
                                  config_.text.vocab_size, init);
  itm_head_ = detail::make_linear(heads_, "itm_head", config_.fusion.width, 2, init);
  log_tau_ = &heads_.add("log_tau", Mat::Constant(1, 1, std::log(config_.temperature.init)),
                         /*no_decay=*/true);
}

std::vector<std::pair<std::string, ParamStore*>> Model::stores() {
  return {{"vision", &vision_->store()},
          {"text", &text_->store()},
          {"fusion", &fusion_->store()},
          {"location", &location_->store()},
          {"heads", &heads_}};
}

std::vector<std::pair<std::string, const ParamStore*>> Model::stores() const {
  return {{"vision", &vision_->store()},
          {"text", &text_->store()},
          {"fusion", &fusion_->store()},
          {"location", &location_->store()},
          {"heads", &heads_}};
}

Var Model::tau(Binding& g) const {
  return g.tape().exp_clamp(g.use(*log_tau_), config_.temperature.tau_min,
                            config_.temperature.tau_max);
}

Var Model::mim_head(Binding& g, Var states) const { return mim_head_.apply(g, states); }
Var Model::mlm_head(Binding& g, Var states) const { return mlm_head_.apply(g, states); }
Var Model::itm_head(Binding& g, Var cls) const { return itm_head_.apply(g, cls); }

namespace {
json model_config_json(const ModelConfig& c) {
  return json{{"vision", to_json(c.vision)},     {"text", to_json(c.text)},
              {"fusion", to_json(c.fusion)},     {"location", to_json(c.location)},
              {"codebook_size", c.codebook_size}, {"temperature", to_json(c.temperature)},
              {"mim_mode", c.mim_mode}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.vision = vision_from_json(j.at("vision"));
  c.text = text_from_json(j.at("text"));
  c.fusion = fusion_from_json(j.at("fusion"));
  c.location = location_from_json(j.at("location"));
  c.codebook_size = j.value("codebook_size", c.codebook_size);
  c.temperature = temperature_from_json(j.at("temperature"));
  c.mim_mode = j.value("mim_mode", c.mim_mode);
  return c;
}

std::string config_fingerprint(const ModelConfig& config, const std::string& vocab_fp) {
  return hex64(fnv1a64(model_config_json(config).dump() + "|vocab:" + vocab_fp));
}
}  // namespace

std::string Model::fingerprint(const std::string& vocab_fingerprint) const {
  return config_fingerprint(config_, vocab_fingerprint);
}

std::uint64_t Model::parameter_checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [prefix, store] : stores()) {
    h = fnv1a64(prefix, h);
    for (const Param& p : store->params()) {
      h = fnv1a64(p.name, h);
      h = fnv1a64(p.value.data(), sizeof(double) * static_cast<std::size_t>(p.value.size()), h);
    }
  }
  return h;
}

void AdamW::step(std::vector<std::pair<std::string, ParamStore*>> stores, const Binding& grads,
                 double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, t_);
  const double bc2 = 1.0 - std::pow(beta2_, t_);
  for (auto& [prefix, store] : stores) {
    for (Param& p : store->params()) {
      const Mat g = grads.grad_of(p);
      auto& [m, v] = moments_[prefix + "." + p.name];
      if (m.size() == 0) {
        m = Mat::Zero(p.value.rows(), p.value.cols());
        v = Mat::Zero(p.value.rows(), p.value.cols());
      }
      m = beta1_ * m + (1.0 - beta1_) * g;
      v = (beta2_ * v.array() + (1.0 - beta2_) * g.array().square()).matrix();
      m = m.unaryExpr([](double x) { return quantize_f32(x); });
      v = v.unaryExpr([](double x) { return quantize_f32(x); });
      Mat update = ((m / bc1).array() / ((v / bc2).array().sqrt() + eps_)).matrix();
      if (!p.no_decay) update += weight_decay_ * p.value;
      p.value -= lr * update;
      p.value = p.value.unaryExpr([](double x) { return quantize_f32(x); });
    }
  }
}

double lr_at_step(const TrainConfig& config, int step) {
  const int s = step + 1;
  if (config.warmup_steps > 0 && s <= config.warmup_steps)
    return config.learning_rate * static_cast<double>(s) /
           static_cast<double>(config.warmup_steps);
  const int decay_span = std::max(1, config.steps - config.warmup_steps);
  const double progress =
      std::min(1.0, static_cast<double>(s - config.warmup_steps) /
                        static_cast<double>(decay_span));
  return config.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

LossBreakdown train_step(Model& model, AdamW& optimizer, const std::vector<BatchItem>& batch,
                         const TrainConfig& config, const TrainContext& ctx, int step, Rng& rng) {
  const int n = static_cast<int>(batch.size());
  if (n < 2) throw TrainError("train_step: batch must have at least 2 samples");
  const ModelConfig& mc = model.config();
  const bool codebook_mode = mc.mim_mode == "codebook";
  if (codebook_mode && ctx.codebook == nullptr)
    throw TrainError("train_step: codebook MIM mode requires a fitted codebook");

  Tape tape;
  Binding g(tape);
  Var tau = model.tau(g);

  // Clean forward passes: contrastive embeddings plus fusion inputs.
  std::vector<Var> img_pooled, txt_pooled, loc_pooled;
  std::vector<Var> img_states, txt_states;
  img_pooled.reserve(n);
  for (const BatchItem& item : batch) {
    auto v = model.vision().forward(g, item.record->image);
    auto t = model.text().forward(g, item.tokens);
    Var l = model.location().forward(g, item.record->coord);
    img_states.push_back(v.token_states);
    txt_states.push_back(t.token_states);
    img_pooled.push_back(v.pooled);
    txt_pooled.push_back(t.pooled);
    loc_pooled.push_back(l);
  }

  // All stochastic choices are drawn here, in a fixed per-sample order, so
  // the step is a pure function of (parameters, batch, rng state).
  struct Choice {
    MaskPlan img_plan;
    MaskPlan txt_plan;
    TokenSequence corrupted;
    int itm_partner = 0;
    int itm_label = 1;
  };
  std::vector<Choice> choices(static_cast<std::size_t>(n));
  const int num_patches = mc.vision.num_patches();
  for (int i = 0; i < n; ++i) {
    Choice& ch = choices[static_cast<std::size_t>(i)];
    ch.img_plan = sample_image_mask(num_patches, config.masking.image_mask_ratio, rng);
    auto [plan, corrupted] =
        sample_text_mask(batch[static_cast<std::size_t>(i)].tokens, config.masking.text_mask_prob,
                         config.masking.mlm_actions, mc.text.vocab_size, rng);
    ch.txt_plan = std::move(plan);
    ch.corrupted = std::move(corrupted);
    if (rng.bernoulli(0.5)) {
      ch.itm_label = 0;
      ch.itm_partner = (i + 1 + static_cast<int>(rng.bounded(static_cast<std::uint64_t>(n - 1)))) % n;
    } else {
      ch.itm_partner = i;
    }
  }

  // Masked-image modeling
  std::vector<Var> mim_rows;
  std::vector<int> mim_targets;
  std::vector<Mat> mim_pixel_targets;
  for (int i = 0; i < n; ++i) {
    const Choice& ch = choices[static_cast<std::size_t>(i)];
    if (ch.img_plan.empty()) continue;
    auto masked = model.vision().forward(g, batch[static_cast<std::size_t>(i)].record->image,
                                         &ch.img_plan);
    std::vector<int> state_rows;
    state_rows.reserve(ch.img_plan.size());
    for (int p : ch.img_plan.positions) state_rows.push_back(p + 1);  // offset past [CLS]
    Var picked = tape.gather_rows(masked.token_states, state_rows);
    mim_rows.push_back(model.mim_head(g, picked));
    const Mat raw = patchify(batch[static_cast<std::size_t>(i)].record->image, mc.vision.patch_size);
    if (codebook_mode) {
      for (int p : ch.img_plan.positions)
        mim_targets.push_back(quantize_patch(raw.row(p), *ctx.codebook));
    } else {
      Mat tgt(static_cast<Eigen::Index>(ch.img_plan.size()), raw.cols());
      for (std::size_t r = 0; r < ch.img_plan.size(); ++r)
        tgt.row(static_cast<Eigen::Index>(r)) =
            raw.row(ch.img_plan.positions[r]) / 127.5 - Eigen::RowVectorXd::Ones(raw.cols());
      mim_pixel_targets.push_back(std::move(tgt));
    }
  }
  Var mim = tape.scalar(0.0);
  if (!mim_rows.empty()) {
    Var logits = mim_rows.size() == 1 ? mim_rows[0] : tape.concat_rows(mim_rows);
    if (codebook_mode) {
      MaskPlan combined;
      for (int r = 0; r < static_cast<int>(mim_targets.size()); ++r) {
        combined.positions.push_back(r);
        combined.actions.push_back(MaskAction::Mask);
      }
      mim = masked_prediction_loss(tape, logits, mim_targets, combined);
    } else {
      Mat target(logits.rows(), logits.cols());
      Eigen::Index at = 0;
      for (const Mat& t : mim_pixel_targets) {
        target.middleRows(at, t.rows()) = t;
        at += t.rows();
      }
      mim = tape.mse_const(logits, target);
    }
  }

  // Masked-language modeling on the corrupted sequences
  std::vector<Var> mlm_rows;
  std::vector<int> mlm_targets;
  for (int i = 0; i < n; ++i) {
    const Choice& ch = choices[static_cast<std::size_t>(i)];
    if (ch.txt_plan.empty()) continue;
    auto masked = model.text().forward(g, ch.corrupted);
    Var picked = tape.gather_rows(masked.token_states, ch.txt_plan.positions);
    mlm_rows.push_back(model.mlm_head(g, picked));
    for (int p : ch.txt_plan.positions)
      mlm_targets.push_back(batch[static_cast<std::size_t>(i)].tokens.ids[static_cast<std::size_t>(p)]);
  }
  Var mlm = tape.scalar(0.0);
  if (!mlm_rows.empty()) {
    Var logits = mlm_rows.size() == 1 ? mlm_rows[0] : tape.concat_rows(mlm_rows);
    MaskPlan combined;
    for (int r = 0; r < static_cast<int>(mlm_targets.size()); ++r) {
      combined.positions.push_back(r);
      combined.actions.push_back(MaskAction::Mask);
    }
    mlm = masked_prediction_loss(tape, logits, mlm_targets, combined);
  }

  // Image-text matching over fused pairs (shuffled-caption negatives)
  std::vector<Var> itm_rows;
  std::vector<int> itm_labels;
  for (int i = 0; i < n; ++i) {
    const Choice& ch = choices[static_cast<std::size_t>(i)];
    const auto j = static_cast<std::size_t>(ch.itm_partner);
    auto fused = model.fusion().forward(g, img_states[static_cast<std::size_t>(i)], txt_states[j],
                                        batch[j].tokens.pad);
    itm_rows.push_back(model.itm_head(g, fused.cls));
    itm_labels.push_back(ch.itm_label);
  }
  Var itm = itm_loss(tape, tape.concat_rows(itm_rows), itm_labels);

  // Global contrastive alignment
  Var img_mat = tape.concat_rows(img_pooled);
  Var txt_mat = tape.concat_rows(txt_pooled);
  Var loc_mat = tape.concat_rows(loc_pooled);
  Var c_it = contrastive_loss(tape, img_mat, txt_mat, tau);
  Var c_il = contrastive_loss(tape, img_mat, loc_mat, tau);

  std::vector<Var> comps{mim, mlm, itm, c_it, c_il};
  std::vector<double> ws{config.weights.mim, config.weights.mlm, config.weights.itm,
                         config.weights.contrastive_it, config.weights.contrastive_il};
  std::vector<std::string> names{"mim", "mlm", "itm", "contrastive_it", "contrastive_il"};
  LossBreakdown out;
  if (config.weights.contrastive_tl > 0.0) {
    Var c_tl = contrastive_loss(tape, txt_mat, loc_mat, tau);
    comps.push_back(c_tl);
    ws.push_back(config.weights.contrastive_tl);
    names.emplace_back("contrastive_tl");
    out.contrastive_tl = c_tl.scalar();
  }
  Var total = total_loss(tape, comps, ws, names);

  tape.backward(total);
  optimizer.step(model.stores(), g, lr_at_step(config, step));

  out.mim = mim.scalar();
  out.mlm = mlm.scalar();
  out.itm = itm.scalar();
  out.contrastive_it = c_it.scalar();
  out.contrastive_il = c_il.scalar();
  out.total = total.scalar();
  return out;
}

LossBreakdown train_step(Model& model, AdamW& optimizer,
                         const std::vector<const SampleRecord*>& batch,
                         const TrainConfig& config, const TrainContext& ctx, int step, Rng& rng) {
  if (ctx.vocab == nullptr) throw TrainError("train_step: vocabulary required");
  std::vector<BatchItem> items;
  items.reserve(batch.size());
  for (const SampleRecord* rec : batch)
    items.push_back({rec, tokenize(rec->caption, *ctx.vocab, config.model.text.max_len)});
  return train_step(model, optimizer, items, config, ctx, step, rng);
}

// --- checkpointing ----------------------------------------------------------

namespace {
constexpr const char* kCheckpointVersion = "flavars-checkpoint-v1";

void append_tensor(std::string& blob, json& table, const std::string& name, const Mat& m) {
  table.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()},
                   {"offset", blob.size()}});
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const float f = static_cast<float>(m.data()[i]);
    char bytes[sizeof(float)];
    std::memcpy(bytes, &f, sizeof(float));
    blob.append(bytes, sizeof(float));
  }
}

Mat read_tensor(const std::string& blob, std::size_t offset, Eigen::Index rows,
                Eigen::Index cols) {
  const std::size_t need = offset + sizeof(float) * static_cast<std::size_t>(rows * cols);
  if (need > blob.size()) throw ChecksumError("checkpoint blob too short");
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    float f;
    std::memcpy(&f, blob.data() + offset + sizeof(float) * static_cast<std::size_t>(i),
                sizeof(float));
    m.data()[i] = static_cast<double>(f);
  }
  return m;
}
}  // namespace

void save_checkpoint(const std::filesystem::path& path_base, const Model& model,
                     const Vocabulary& vocab, const AdamW& optimizer, int step,
                     std::uint64_t master_seed) {
  std::string blob;
  json table = json::array();
  for (const auto& [prefix, store] : model.stores())
    for (const Param& p : store->params()) append_tensor(blob, table, prefix + "." + p.name, p.value);
  for (const auto& [name, mv] : optimizer.moments()) {
    append_tensor(blob, table, "opt.m." + name, mv.first);
    append_tensor(blob, table, "opt.v." + name, mv.second);
  }
  json manifest{{"version", kCheckpointVersion},
                {"step", step},
                {"master_seed", master_seed},
                {"opt_t", optimizer.steps_taken()},
                {"config", model_config_json(model.config())},
                {"vocab", vocab.id_to_token},
                {"fingerprint", model.fingerprint(vocab.fingerprint())},
                {"tensors", table},
                {"blob_bytes", blob.size()},
                {"blob_checksum", hex64(fnv1a64(blob))}};
  write_text_file(path_base.string() + ".json", manifest.dump(2) + "\n");
  write_text_file(path_base.string() + ".bin", blob);
}

Checkpoint load_checkpoint(const std::filesystem::path& path_base) {
  const json manifest = json::parse(read_text_file(path_base.string() + ".json"));
  if (manifest.at("version").get<std::string>() != kCheckpointVersion)
    throw IoError("load_checkpoint: unsupported version");
  const std::string blob = read_text_file(path_base.string() + ".bin");
  if (blob.size() != manifest.at("blob_bytes").get<std::size_t>() ||
      hex64(fnv1a64(blob)) != manifest.at("blob_checksum").get<std::string>())
    throw ChecksumError("load_checkpoint: blob checksum mismatch");

  Checkpoint ckpt;
  ckpt.config = model_config_from_json(manifest.at("config"));
  ckpt.vocab.id_to_token = manifest.at("vocab").get<std::vector<std::string>>();
  for (std::size_t i = 0; i < ckpt.vocab.id_to_token.size(); ++i)
    ckpt.vocab.token_to_id[ckpt.vocab.id_to_token[i]] = static_cast<int>(i);
  ckpt.step = manifest.at("step").get<int>();
  ckpt.master_seed = manifest.at("master_seed").get<std::uint64_t>();
  ckpt.opt_t = manifest.at("opt_t").get<int>();

  const std::string stored_fp = manifest.at("fingerprint").get<std::string>();
  if (stored_fp != config_fingerprint(ckpt.config, ckpt.vocab.fingerprint()))
    throw FingerprintError("load_checkpoint: fingerprint does not match stored config");

  ckpt.model = std::make_unique<Model>(ckpt.config, ckpt.master_seed);

  std::unordered_map<std::string, const json*> by_name;
  for (const auto& entry : manifest.at("tensors")) by_name[entry.at("name")] = &entry;
  auto fetch = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("load_checkpoint: missing tensor '" + name + "'");
    const json& e = *it->second;
    if (e.at("rows").get<Eigen::Index>() != rows || e.at("cols").get<Eigen::Index>() != cols)
      throw IoError("load_checkpoint: shape mismatch for '" + name + "'");
    return read_tensor(blob, e.at("offset").get<std::size_t>(), rows, cols);
  };
  for (auto& [prefix, store] : ckpt.model->stores())
    for (Param& p : store->params())
      p.value = fetch(prefix + "." + p.name, p.value.rows(), p.value.cols());
  for (const auto& entry : manifest.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    if (name.rfind("opt.m.", 0) == 0) {
      const std::string base = name.substr(6);
      ckpt.opt_moments[base].first = read_tensor(blob, entry.at("offset").get<std::size_t>(),
                                                 entry.at("rows").get<Eigen::Index>(),
                                                 entry.at("cols").get<Eigen::Index>());
    } else if (name.rfind("opt.v.", 0) == 0) {
      const std::string base = name.substr(6);
      ckpt.opt_moments[base].second = read_tensor(blob, entry.at("offset").get<std::size_t>(),
                                                  entry.at("rows").get<Eigen::Index>(),
                                                  entry.at("cols").get<Eigen::Index>());
    }
  }
  return ckpt;
}

void verify_checkpoint_config(const Checkpoint& ckpt, const ModelConfig& expected,
                              const std::string& vocab_fingerprint, bool force) {
  const std::string want = config_fingerprint(expected, vocab_fingerprint);
  const std::string have = config_fingerprint(ckpt.config, ckpt.vocab.fingerprint());
  if (want != have && !force)
    throw FingerprintError("checkpoint fingerprint " + have + " does not match expected " + want);
}

// --- fit ---------------------------------------------------------------------

FitResult fit(const TrainConfig& config, const Dataset& dataset, const SplitSpec& splits,
              const std::optional<std::filesystem::path>& resume_from) {
  config.validate();
  if (config.out_dir.empty()) throw ConfigError("fit: out_dir not set");
  std::filesystem::create_directories(config.out_dir);

  std::unordered_map<std::string, const SampleRecord*> by_id;
  for (const auto& r : dataset.records) by_id[r.id] = &r;
  std::vector<const SampleRecord*> train;
  train.reserve(splits.train.size());
  for (const auto& id : splits.train) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("fit: split id '" + id + "' not in dataset");
    train.push_back(it->second);
  }
  if (static_cast<int>(train.size()) < config.batch_size)
    throw ConfigError("fit: train split smaller than batch_size");

  // Vocabulary from the training captions; the text encoder is sized to the
  // vocabulary that was actually built.
  std::vector<std::string> captions;
  captions.reserve(train.size());
  for (const auto* r : train) captions.push_back(r->caption);
  const Vocabulary vocab = build_vocab(captions, config.model.text.vocab_size);
  ModelConfig mc = config.model;
  mc.text.vocab_size = vocab.size();

  // MIM codebook over raw training patches
  PatchCodebook codebook;
  if (mc.mim_mode == "codebook") {
    const int per_image = mc.vision.num_patches();
    const int max_images =
        std::max(1, config.max_codebook_patches / std::max(1, per_image));
    const int use = std::min<int>(static_cast<int>(train.size()), max_images);
    Mat patches(use * per_image, mc.vision.patch_dim());
    for (int i = 0; i < use; ++i)
      patches.middleRows(i * per_image, per_image) = patchify(train[static_cast<std::size_t>(i)]->image, mc.vision.patch_size);
    Rng cb_rng = fork_rng(config.seed, "codebook", 0);
    codebook = fit_patch_codebook(patches, mc.codebook_size, cb_rng);
  }

  auto model = std::make_unique<Model>(mc, config.seed);
  AdamW optimizer(config.weight_decay);
  int start_step = 0;
  if (resume_from) {
    Checkpoint ckpt = load_checkpoint(*resume_from);
    verify_checkpoint_config(ckpt, mc, vocab.fingerprint());
    model = std::move(ckpt.model);
    optimizer.restore(std::move(ckpt.opt_moments), ckpt.opt_t);
    start_step = ckpt.step;
    if (start_step >= config.steps)
      throw ConfigError("fit: checkpoint is already at or past the configured step count");
  }

  std::vector<TokenSequence> tokens;
  tokens.reserve(train.size());
  for (const auto* r : train) tokens.push_back(tokenize(r->caption, vocab, mc.text.max_len));

  const auto log_path = config.out_dir / "loss_log.jsonl";
  std::ofstream log(log_path, start_step > 0 ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("fit: cannot open loss log " + log_path.string());

  TrainContext ctx;
  ctx.vocab = &vocab;
  ctx.codebook = &codebook;

  const int batches_per_epoch = static_cast<int>(train.size()) / config.batch_size;
  std::vector<std::size_t> order;
  int cached_epoch = -1;

  FitResult result;
  result.loss_log = log_path;
  auto checkpoint_base = [&](int completed) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06d", completed);
    return config.out_dir / ("ckpt_" + std::string(buf));
  };

  for (int step = start_step; step < config.steps; ++step) {
    const int epoch = step / batches_per_epoch;
    if (epoch != cached_epoch) {
      order.resize(train.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      Rng epoch_rng = fork_rng(config.seed, "epoch", static_cast<std::uint64_t>(epoch));
      epoch_rng.shuffle(order);
      cached_epoch = epoch;
    }
    const int pos = step % batches_per_epoch;
    std::vector<BatchItem> batch;
    batch.reserve(static_cast<std::size_t>(config.batch_size));
    for (int b = 0; b < config.batch_size; ++b) {
      const std::size_t idx = order[static_cast<std::size_t>(pos * config.batch_size + b)];
      batch.push_back({train[idx], tokens[idx]});
    }
    Rng step_rng = fork_rng(config.seed, "step", static_cast<std::uint64_t>(step));
    const LossBreakdown lb = train_step(*model, optimizer, batch, config, ctx, step, step_rng);
    if (step == start_step && start_step == 0) result.first_step = lb;
    result.last_step = lb;

    json line{{"step", step + 1},          {"mim", lb.mim},   {"mlm", lb.mlm},
              {"itm", lb.itm},             {"c_it", lb.contrastive_it},
              {"c_il", lb.contrastive_il}, {"total", lb.total},
              {"lr", lr_at_step(config, step)}};
    log << line.dump() << "\n";

    const int completed = step + 1;
    if (completed % config.checkpoint_every == 0 || completed == config.steps) {
      result.final_checkpoint = checkpoint_base(completed);
      save_checkpoint(result.final_checkpoint, *model, vocab, optimizer, completed, config.seed);
    }
  }
  log.flush();
  return result;
}

}  // namespace flavars
