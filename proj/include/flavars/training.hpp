#pragma once

#include <map>
#include <memory>
#include <optional>
#include <utility>

#include "flavars/datapipe.hpp"
#include "flavars/encoders.hpp"
#include "flavars/objectives.hpp"

namespace flavars {

struct ModelConfig {
  VisionConfig vision;
  TextConfig text;
  FusionConfig fusion;
  LocationConfig location;
  int codebook_size = 64;
  TemperatureParam temperature;
  // "codebook" = classification over k-means patch codes; "pixel" = MAE-style
  // regression of the normalized masked patch pixels.
  std::string mim_mode = "codebook";

  void validate() const;
};

// The four encoders plus the objective heads and the shared learnable
// temperature. Immutable during inference; training mutates exclusively.
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  VisionEncoder& vision() { return *vision_; }
  const VisionEncoder& vision() const { return *vision_; }
  TextEncoder& text() { return *text_; }
  const TextEncoder& text() const { return *text_; }
  FusionEncoder& fusion() { return *fusion_; }
  const FusionEncoder& fusion() const { return *fusion_; }
  LocationEncoder& location() { return *location_; }
  const LocationEncoder& location() const { return *location_; }

  const ModelConfig& config() const { return config_; }

  // ordered (prefix, store) pairs; defines checkpoint tensor layout
  std::vector<std::pair<std::string, ParamStore*>> stores();
  std::vector<std::pair<std::string, const ParamStore*>> stores() const;

  Var tau(Binding& g) const;

  Var mim_head(Binding& g, Var states) const;
  Var mlm_head(Binding& g, Var states) const;
  Var itm_head(Binding& g, Var cls) const;

  // FNV fingerprint of the model config plus the vocabulary it was built for.
  std::string fingerprint(const std::string& vocab_fingerprint) const;

  // checksum over all parameter values (used by frozen-encoder assertions)
  std::uint64_t parameter_checksum() const;

 private:
  ModelConfig config_;
  std::unique_ptr<VisionEncoder> vision_;
  std::unique_ptr<TextEncoder> text_;
  std::unique_ptr<FusionEncoder> fusion_;
  std::unique_ptr<LocationEncoder> location_;
  ParamStore heads_;
  detail::Linear mim_head_, mlm_head_, itm_head_;
  Param* log_tau_ = nullptr;
};

// Decoupled-weight-decay adaptive-moment optimizer. Moments are quantized
// to float32 after every step, like the parameters they track.
class AdamW {
 public:
  explicit AdamW(double weight_decay = 0.01, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8)
      : weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::vector<std::pair<std::string, ParamStore*>> stores, const Binding& grads,
            double lr);

  int steps_taken() const { return t_; }
  std::map<std::string, std::pair<Mat, Mat>>& moments() { return moments_; }
  const std::map<std::string, std::pair<Mat, Mat>>& moments() const { return moments_; }
  void restore(std::map<std::string, std::pair<Mat, Mat>> moments, int t) {
    moments_ = std::move(moments);
    t_ = t;
  }

 private:
  double weight_decay_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::map<std::string, std::pair<Mat, Mat>> moments_;
};

struct TrainConfig {
  int batch_size = 32;
  int steps = 600;
  double learning_rate = 1e-3;
  int warmup_steps = 100;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  LossWeights weights;
  MaskingConfig masking;
  ModelConfig model;
  int checkpoint_every = 200;
  std::filesystem::path out_dir;
  int max_codebook_patches = 4096;

  void validate() const {
    if (batch_size < 2) throw ConfigError("TrainConfig: batch_size must be >= 2");
    if (steps < 1) throw ConfigError("TrainConfig: steps must be >= 1");
    if (learning_rate < 0) throw ConfigError("TrainConfig: negative learning rate");
    if (checkpoint_every < 1) throw ConfigError("TrainConfig: checkpoint_every must be >= 1");
    weights.validate();
    masking.validate();
    model.validate();
  }
};

// linear warmup then cosine decay to zero
double lr_at_step(const TrainConfig& config, int step);

struct BatchItem {
  const SampleRecord* record = nullptr;
  TokenSequence tokens;
};

struct TrainContext {
  const Vocabulary* vocab = nullptr;
  const PatchCodebook* codebook = nullptr;  // required in codebook MIM mode
};

// One forward/backward/update over a fully paired batch. All stochastic
// choices (mask plans, ITM negatives) come from `rng` in a fixed order.
LossBreakdown train_step(Model& model, AdamW& optimizer, const std::vector<BatchItem>& batch,
                         const TrainConfig& config, const TrainContext& ctx, int step, Rng& rng);

// Convenience wrapper matching the spec surface: tokenizes the records and
// runs one step.
LossBreakdown train_step(Model& model, AdamW& optimizer,
                         const std::vector<const SampleRecord*>& batch,
                         const TrainConfig& config, const TrainContext& ctx, int step, Rng& rng);

// --- checkpointing ---------------------------------------------------------

struct Checkpoint {
  ModelConfig config;
  Vocabulary vocab;
  int step = 0;
  std::uint64_t master_seed = 0;
  std::unique_ptr<Model> model;
  std::map<std::string, std::pair<Mat, Mat>> opt_moments;
  int opt_t = 0;
};

// Writes <path>.json (versioned manifest: config, vocab, fingerprint, rng
// seed, tensor table, blob checksum) and <path>.bin (little-endian float32).
void save_checkpoint(const std::filesystem::path& path_base, const Model& model,
                     const Vocabulary& vocab, const AdamW& optimizer, int step,
                     std::uint64_t master_seed);

Checkpoint load_checkpoint(const std::filesystem::path& path_base);

// Fingerprint guard for loading into an existing configuration.
void verify_checkpoint_config(const Checkpoint& ckpt, const ModelConfig& expected,
                              const std::string& vocab_fingerprint, bool force = false);

// --- full training loop -----------------------------------------------------

struct FitResult {
  std::filesystem::path final_checkpoint;  // base path without extension
  std::filesystem::path loss_log;
  LossBreakdown first_step;
  LossBreakdown last_step;
};

// Seeded shuffled batching per epoch, warmup+cosine schedule, checkpoints
// every checkpoint_every steps and at the end, one structured log line per
// step. Resumable: pass a checkpoint base path to continue its run; the
// continuation reproduces an uninterrupted run exactly.
FitResult fit(const TrainConfig& config, const Dataset& dataset, const SplitSpec& splits,
              const std::optional<std::filesystem::path>& resume_from = std::nullopt);

}  // namespace flavars
