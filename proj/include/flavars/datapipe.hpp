#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "flavars/image.hpp"
#include "flavars/sph_harm.hpp"
#include "flavars/tokens.hpp"

namespace flavars {

// One phrase grounded to a pixel box, x/y in [0, W] x [0, H],
// x_min < x_max and y_min < y_max.
struct Grounding {
  std::string phrase;
  std::array<int, 4> bbox{};  // x_min, y_min, x_max, y_max
};

struct GroundedCaption {
  std::string text;
  std::vector<Grounding> groundings;
  // Set when a response's grounding list failed bbox validation and was
  // rejected wholesale (the improved caption is kept).
  bool rejected = false;
};

// The dataset atom: one image + caption + coordinate + score.
struct SampleRecord {
  std::string id;
  std::string caption;
  GeoCoordinate coord;
  double score = 0.0;  // upstream similarity score in [-1, 1]
  std::string image_path;
  Image image;
  std::optional<GroundedCaption> grounded;
};

struct DatasetManifest {
  int schema_version = 1;
  int image_h = 0, image_w = 0, image_c = 0;
  std::size_t record_count = 0;
  std::vector<std::string> shards{"records.jsonl"};
  std::string tokenizer_fingerprint;  // empty until a vocabulary is attached
};

// Optional evaluation sidecar: class names plus per-record integer labels.
struct EvalLabels {
  std::vector<std::string> classes;
  std::unordered_map<std::string, int> labels;
};

struct Dataset {
  std::filesystem::path root;
  DatasetManifest manifest;
  std::vector<SampleRecord> records;
  std::optional<EvalLabels> labels;

  const SampleRecord& by_id(const std::string& id) const;
};

struct SplitSpec {
  std::uint64_t seed = 0;
  std::array<double, 3> fractions{0.7, 0.1, 0.2};  // train, val, test
  std::vector<std::string> train, val, test;

  std::string fingerprint() const;
};

// Whole-word frequency vocabulary with fixed special ids.
struct Vocabulary {
  std::vector<std::string> id_to_token;  // dense, specials first
  std::unordered_map<std::string, int> token_to_id;

  int size() const { return static_cast<int>(id_to_token.size()); }
  int encode(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? tok::kUnk : it->second;
  }
  std::string fingerprint() const;
};

// --- operations -----------------------------------------------------------

// ceil(fraction * N) highest-scoring records; score ties broken by
// ascending id. NaN scores are treated as missing and rejected.
std::vector<SampleRecord> filter_top_fraction(const std::vector<SampleRecord>& records,
                                              double fraction);

// Deterministic Fisher-Yates shuffle of the ids under the project PRNG
// seeded by `seed`; val and test sizes are floor(fraction * N), the
// remainder goes to train.
SplitSpec generate_splits(const std::vector<std::string>& ids, std::uint64_t seed,
                          const std::array<double, 3>& fractions);

// Lowercase whitespace/punctuation-split corpus vocabulary: the
// (max_size - 5) most frequent tokens, frequency ties by lexicographic
// order, preceded by the five specials.
Vocabulary build_vocab(const std::vector<std::string>& corpus, int max_size);

// [CLS] + tokens + [SEP], truncated to max_len (keeping [CLS]/[SEP]),
// padded with [PAD] to exactly max_len.
TokenSequence tokenize(const std::string& caption, const Vocabulary& vocab, int max_len);

std::vector<std::string> split_words(const std::string& text);

// --- persistence ----------------------------------------------------------

void save_dataset(const std::filesystem::path& dir, const std::vector<SampleRecord>& records,
                  const std::optional<EvalLabels>& labels = std::nullopt,
                  const std::unordered_map<std::string, Image>* masks = nullptr);
Dataset load_dataset(const std::filesystem::path& dir, bool load_images = true);

void save_splits(const std::filesystem::path& path, const SplitSpec& spec);
SplitSpec load_splits(const std::filesystem::path& path);
std::string splits_to_json(const SplitSpec& spec);

void save_vocab(const std::filesystem::path& path, const Vocabulary& vocab);
Vocabulary load_vocab(const std::filesystem::path& path);

std::filesystem::path mask_path(const std::filesystem::path& root, const std::string& id);

}  // namespace flavars
