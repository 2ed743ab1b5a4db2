#include "flavars/datapipe.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "flavars/rng.hpp"

namespace flavars {

using nlohmann::json;

const SampleRecord& Dataset::by_id(const std::string& id) const {
  for (const auto& r : records)
    if (r.id == id) return r;
  throw DataError("Dataset: unknown record id '" + id + "'");
}

std::string SplitSpec::fingerprint() const { return hex64(fnv1a64(splits_to_json(*this))); }

std::string Vocabulary::fingerprint() const {
  std::string joined;
  for (const auto& t : id_to_token) {
    joined += t;
    joined.push_back('\n');
  }
  return hex64(fnv1a64(joined));
}

std::vector<SampleRecord> filter_top_fraction(const std::vector<SampleRecord>& records,
                                              double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ConfigError("filter_top_fraction: fraction must be in (0, 1]");
  for (const auto& r : records)
    if (std::isnan(r.score)) throw DataError("filter_top_fraction: record '" + r.id +
                                             "' has no score");
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (records[a].score != records[b].score) return records[a].score > records[b].score;
    return records[a].id < records[b].id;
  });
  // epsilon nudge keeps ceil() stable against representation error
  const auto keep = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(records.size()) - 1e-9));
  std::vector<SampleRecord> out;
  out.reserve(keep);
  for (std::size_t i = 0; i < keep && i < order.size(); ++i) out.push_back(records[order[i]]);
  return out;
}

SplitSpec generate_splits(const std::vector<std::string>& ids, std::uint64_t seed,
                          const std::array<double, 3>& fractions) {
  const double sum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(sum - 1.0) > 1e-9)
    throw ConfigError("generate_splits: fractions must sum to 1");
  for (double f : fractions)
    if (f < 0.0) throw ConfigError("generate_splits: fractions must be nonnegative");
  {
    std::set<std::string> uniq(ids.begin(), ids.end());
    if (uniq.size() != ids.size()) throw DataError("generate_splits: duplicate ids");
  }
  std::vector<std::string> shuffled = ids;
  Rng rng(seed);
  rng.shuffle(shuffled);
  const double n = static_cast<double>(ids.size());
  const auto n_val = static_cast<std::size_t>(std::floor(fractions[1] * n + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(fractions[2] * n + 1e-9));
  const std::size_t n_train = ids.size() - n_val - n_test;
  SplitSpec spec;
  spec.seed = seed;
  spec.fractions = fractions;
  spec.train.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_train));
  spec.val.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_train),
                  shuffled.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  spec.test.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_train + n_val),
                   shuffled.end());
  return spec;
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char raw : text) {
    const auto ch = static_cast<unsigned char>(raw);
    if (std::isalnum(ch)) {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

Vocabulary build_vocab(const std::vector<std::string>& corpus, int max_size) {
  if (corpus.empty()) throw DataError("build_vocab: empty corpus");
  if (max_size < tok::kNumSpecials)
    throw ConfigError("build_vocab: max_size must hold the special tokens");
  std::map<std::string, std::size_t> counts;
  for (const auto& caption : corpus)
    for (auto& w : split_words(caption)) counts[w]++;
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary vocab;
  vocab.id_to_token = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  const auto room = static_cast<std::size_t>(max_size - tok::kNumSpecials);
  for (std::size_t i = 0; i < ranked.size() && i < room; ++i)
    vocab.id_to_token.push_back(ranked[i].first);
  for (std::size_t i = 0; i < vocab.id_to_token.size(); ++i)
    vocab.token_to_id[vocab.id_to_token[i]] = static_cast<int>(i);
  return vocab;
}

TokenSequence tokenize(const std::string& caption, const Vocabulary& vocab, int max_len) {
  if (max_len < 2) throw ConfigError("tokenize: max_len must be >= 2");
  TokenSequence seq;
  seq.ids.push_back(tok::kCls);
  for (const auto& w : split_words(caption)) {
    if (static_cast<int>(seq.ids.size()) >= max_len - 1) break;
    seq.ids.push_back(vocab.encode(w));
  }
  seq.ids.push_back(tok::kSep);
  seq.pad.assign(seq.ids.size(), 0);
  while (static_cast<int>(seq.ids.size()) < max_len) {
    seq.ids.push_back(tok::kPad);
    seq.pad.push_back(1);
  }
  return seq;
}

// --- persistence ----------------------------------------------------------

namespace {

json grounded_to_json(const GroundedCaption& g) {
  json arr = json::array();
  for (const auto& gr : g.groundings)
    arr.push_back({{"phrase", gr.phrase}, {"bbox", gr.bbox}});
  json out{{"text", g.text}, {"groundings", arr}};
  if (g.rejected) out["rejected"] = true;
  return out;
}

GroundedCaption grounded_from_json(const json& j) {
  GroundedCaption g;
  g.text = j.at("text").get<std::string>();
  for (const auto& gr : j.at("groundings")) {
    Grounding grd;
    grd.phrase = gr.at("phrase").get<std::string>();
    const auto& bb = gr.at("bbox");
    if (!bb.is_array() || bb.size() != 4) throw DataError("record grounding: bad bbox");
    for (std::size_t i = 0; i < 4; ++i) grd.bbox[i] = bb[i].get<int>();
    g.groundings.push_back(std::move(grd));
  }
  g.rejected = j.value("rejected", false);
  return g;
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const std::vector<SampleRecord>& records,
                  const std::optional<EvalLabels>& labels,
                  const std::unordered_map<std::string, Image>* masks) {
  if (records.empty()) throw DataError("save_dataset: no records");
  std::filesystem::create_directories(dir / "images");
  {
    std::set<std::string> seen;
    for (const auto& r : records)
      if (!seen.insert(r.id).second)
        throw DataError("save_dataset: duplicate record id '" + r.id + "'");
  }
  const Image& first = records.front().image;
  std::string lines;
  for (const auto& r : records) {
    if (r.image.h != first.h || r.image.w != first.w || r.image.c != first.c)
      throw DataError("save_dataset: image dims differ across records");
    const std::string rel = "images/" + r.id + (r.image.c == 3 ? ".ppm" : ".pgm");
    write_pnm(dir / rel, r.image);
    json line{{"id", r.id},       {"caption", r.caption},  {"lat", r.coord.lat},
              {"lon", r.coord.lon}, {"score", r.score},      {"image_path", rel},
              {"grounded", r.grounded ? grounded_to_json(*r.grounded) : json(nullptr)}};
    lines += line.dump();
    lines += '\n';
  }
  write_text_file(dir / "records.jsonl", lines);

  DatasetManifest m;
  m.image_h = first.h;
  m.image_w = first.w;
  m.image_c = first.c;
  m.record_count = records.size();
  json mj{{"schema_version", m.schema_version},
          {"image_dims", {{"h", m.image_h}, {"w", m.image_w}, {"c", m.image_c}}},
          {"record_count", m.record_count},
          {"shards", m.shards},
          {"tokenizer_fingerprint", m.tokenizer_fingerprint}};
  write_text_file(dir / "manifest.json", mj.dump(2) + "\n");

  if (labels) {
    json lj{{"classes", labels->classes}, {"labels", json::object()}};
    for (const auto& [id, cls] : std::map<std::string, int>(labels->labels.begin(),
                                                            labels->labels.end()))
      lj["labels"][id] = cls;
    write_text_file(dir / "labels.json", lj.dump(2) + "\n");
  }
  if (masks != nullptr) {
    std::filesystem::create_directories(dir / "masks");
    for (const auto& [id, mask] : *masks) write_pnm(mask_path(dir, id), mask);
  }
}

Dataset load_dataset(const std::filesystem::path& dir, bool load_images) {
  Dataset ds;
  ds.root = dir;
  const json mj = json::parse(read_text_file(dir / "manifest.json"));
  ds.manifest.schema_version = mj.at("schema_version").get<int>();
  ds.manifest.image_h = mj.at("image_dims").at("h").get<int>();
  ds.manifest.image_w = mj.at("image_dims").at("w").get<int>();
  ds.manifest.image_c = mj.at("image_dims").at("c").get<int>();
  ds.manifest.record_count = mj.at("record_count").get<std::size_t>();
  ds.manifest.shards = mj.at("shards").get<std::vector<std::string>>();
  ds.manifest.tokenizer_fingerprint = mj.value("tokenizer_fingerprint", "");

  std::set<std::string> seen;
  for (const auto& shard : ds.manifest.shards) {
    std::ifstream in(dir / shard);
    if (!in) throw IoError("load_dataset: cannot open shard " + shard);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      SampleRecord r;
      r.id = j.at("id").get<std::string>();
      if (!seen.insert(r.id).second)
        throw DataError("load_dataset: duplicate record id '" + r.id + "'");
      r.caption = j.at("caption").get<std::string>();
      r.coord = GeoCoordinate(j.at("lat").get<double>(), j.at("lon").get<double>());
      r.score = j.at("score").get<double>();
      r.image_path = j.at("image_path").get<std::string>();
      if (!j.at("grounded").is_null()) r.grounded = grounded_from_json(j.at("grounded"));
      if (load_images) {
        r.image = read_pnm(dir / r.image_path);
        if (r.image.h != ds.manifest.image_h || r.image.w != ds.manifest.image_w ||
            r.image.c != ds.manifest.image_c)
          throw DataError("load_dataset: image dims mismatch for '" + r.id + "'");
      }
      ds.records.push_back(std::move(r));
    }
  }
  if (ds.records.size() != ds.manifest.record_count)
    throw DataError("load_dataset: record count does not match manifest");

  const auto labels_file = dir / "labels.json";
  if (std::filesystem::exists(labels_file)) {
    const json lj = json::parse(read_text_file(labels_file));
    EvalLabels labels;
    labels.classes = lj.at("classes").get<std::vector<std::string>>();
    for (const auto& [id, cls] : lj.at("labels").items())
      labels.labels[id] = cls.get<int>();
    ds.labels = std::move(labels);
  }
  return ds;
}

std::string splits_to_json(const SplitSpec& spec) {
  json j{{"seed", spec.seed},
         {"fractions", spec.fractions},
         {"train", spec.train},
         {"val", spec.val},
         {"test", spec.test}};
  return j.dump(2) + "\n";
}

void save_splits(const std::filesystem::path& path, const SplitSpec& spec) {
  write_text_file(path, splits_to_json(spec));
}

SplitSpec load_splits(const std::filesystem::path& path) {
  const json j = json::parse(read_text_file(path));
  SplitSpec spec;
  spec.seed = j.at("seed").get<std::uint64_t>();
  const auto fr = j.at("fractions").get<std::vector<double>>();
  if (fr.size() != 3) throw DataError("load_splits: fractions must have 3 entries");
  spec.fractions = {fr[0], fr[1], fr[2]};
  spec.train = j.at("train").get<std::vector<std::string>>();
  spec.val = j.at("val").get<std::vector<std::string>>();
  spec.test = j.at("test").get<std::vector<std::string>>();
  return spec;
}

void save_vocab(const std::filesystem::path& path, const Vocabulary& vocab) {
  json j{{"tokens", vocab.id_to_token}, {"fingerprint", vocab.fingerprint()}};
  write_text_file(path, j.dump(2) + "\n");
}

Vocabulary load_vocab(const std::filesystem::path& path) {
  const json j = json::parse(read_text_file(path));
  Vocabulary vocab;
  vocab.id_to_token = j.at("tokens").get<std::vector<std::string>>();
  for (std::size_t i = 0; i < vocab.id_to_token.size(); ++i)
    vocab.token_to_id[vocab.id_to_token[i]] = static_cast<int>(i);
  return vocab;
}

std::filesystem::path mask_path(const std::filesystem::path& root, const std::string& id) {
  return root / "masks" / (id + ".pgm");
}

}  // namespace flavars
