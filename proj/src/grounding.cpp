#include "flavars/grounding.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "flavars/rng.hpp"

namespace flavars {

using nlohmann::json;

std::string build_grounding_request(const SampleRecord& record) {
  if (record.image.pix.empty()) throw DataError("build_grounding_request: record has no image");
  if (record.caption.empty()) throw DataError("build_grounding_request: record has no caption");
  const int w = record.image.w, h = record.image.h;
  const std::string pnm = pnm_bytes(record.image);
  json payload{
      {"record_id", record.id},
      {"caption", record.caption},
      {"image",
       {{"width", w},
        {"height", h},
        {"channels", record.image.c},
        {"encoding", "pnm_base64"},
        {"data", base64_encode(reinterpret_cast<const std::uint8_t*>(pnm.data()), pnm.size())}}},
      {"instruction",
       "Rewrite the caption as a detailed paragraph describing the image, using both the image "
       "content and the original caption. Then detect each subject mentioned in your paragraph "
       "and report a pixel bounding box [x_min, y_min, x_max, y_max] for it, with 0 <= x_min < "
       "x_max <= " +
           std::to_string(w) + " and 0 <= y_min < y_max <= " + std::to_string(h) +
           ". Respond with JSON matching response_schema exactly."},
      {"response_schema",
       {{"caption", "string"},
        {"groundings", json::array({{{"phrase", "string"}, {"bbox", "[4 integers]"}}})}}}};
  return payload.dump();
}

namespace {

bool integral_number(const json& v, int& out) {
  if (v.is_number_integer()) {
    out = v.get<int>();
    return true;
  }
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (d == std::floor(d) && std::abs(d) < 1e9) {
      out = static_cast<int>(d);
      return true;
    }
  }
  return false;
}

}  // namespace

GroundedParse parse_grounded_response(const std::string& text, int image_w, int image_h) {
  GroundedParse result;
  json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object() || !j.contains("caption") ||
      !j.at("caption").is_string() || !j.contains("groundings") ||
      !j.at("groundings").is_array()) {
    result.status = GroundedParse::Status::ParseError;
    result.error = "malformed grounding response";
    return result;
  }
  GroundedCaption cap;
  cap.text = j.at("caption").get<std::string>();
  for (std::size_t gi = 0; gi < j.at("groundings").size(); ++gi) {
    const json& g = j.at("groundings")[gi];
    if (!g.is_object() || !g.contains("phrase") || !g.at("phrase").is_string() ||
        !g.contains("bbox") || !g.at("bbox").is_array() || g.at("bbox").size() != 4) {
      result.status = GroundedParse::Status::ParseError;
      result.error = "malformed grounding entry " + std::to_string(gi);
      return result;
    }
    Grounding grd;
    grd.phrase = g.at("phrase").get<std::string>();
    for (std::size_t i = 0; i < 4; ++i) {
      if (!integral_number(g.at("bbox")[i], grd.bbox[i])) {
        result.status = GroundedParse::Status::ParseError;
        result.error = "non-integral bbox coordinate in entry " + std::to_string(gi);
        return result;
      }
    }
    const auto [x0, y0, x1, y1] = grd.bbox;
    const bool in_bounds = x0 >= 0 && x1 <= image_w && y0 >= 0 && y1 <= image_h;
    const bool proper = x0 < x1 && y0 < y1;
    if (grd.phrase.empty() || !in_bounds || !proper) {
      result.status = GroundedParse::Status::ValidationError;
      result.error = grd.phrase.empty()
                         ? "empty phrase in grounding entry " + std::to_string(gi)
                         : "invalid bbox for phrase '" + grd.phrase + "'";
      result.caption.text = cap.text;
      result.caption.groundings.clear();
      result.caption.rejected = true;
      return result;
    }
    cap.groundings.push_back(std::move(grd));
  }
  result.caption = std::move(cap);
  return result;
}

HttpVlmTransport::HttpVlmTransport(std::string endpoint, std::string api_key)
    : endpoint_(std::move(endpoint)), api_key_(std::move(api_key)) {}

VlmReply HttpVlmTransport::post(const std::string& payload) {
  const auto scheme_end = endpoint_.find("://");
  if (scheme_end == std::string::npos) return {0, "bad endpoint"};
  const auto path_start = endpoint_.find('/', scheme_end + 3);
  const std::string base =
      path_start == std::string::npos ? endpoint_ : endpoint_.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : endpoint_.substr(path_start);
  httplib::Client client(base);
  client.set_connection_timeout(10);
  client.set_read_timeout(60);
  httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};
  auto res = client.Post(path, headers, payload, "application/json");
  if (!res) return {0, "transport error"};
  return {res->status, res->body};
}

VlmReply BuiltinMockTransport::post(const std::string& payload) {
  const json req = json::parse(payload);
  const std::string caption = req.at("caption").get<std::string>();
  const int w = req.at("image").at("width").get<int>();
  const int h = req.at("image").at("height").get<int>();
  json body{{"caption", "A detailed satellite view. " + caption + "."},
            {"groundings",
             json::array({{{"phrase", caption},
                           {"bbox", {w / 4, h / 4, w - w / 4, h - h / 4}}}})}};
  return {200, body.dump()};
}

namespace {

struct RecordTask {
  GroundStatus run(SampleRecord& rec, const GroundingClientConfig& cfg, VlmTransport& transport,
                   std::mutex& cache_mutex) const {
    GroundStatus status;
    status.id = rec.id;
    if (rec.grounded && !rec.grounded->rejected && !cfg.force) {
      status.outcome = GroundStatus::Outcome::Skipped;
      status.message = "already grounded";
      return status;
    }
    const std::string payload = build_grounding_request(rec);
    const std::filesystem::path cache_file =
        cfg.cache_dir / (rec.id + "_" + hex64(fnv1a64(payload)) + ".json");

    if (!cfg.cache_dir.empty() && std::filesystem::exists(cache_file)) {
      const std::string body = read_text_file(cache_file);
      auto parsed = parse_grounded_response(body, rec.image.w, rec.image.h);
      if (parsed.status != GroundedParse::Status::ParseError) {
        rec.grounded = parsed.caption;
        status.outcome = GroundStatus::Outcome::FromCache;
        status.message = parsed.error;
        return status;
      }
      // poisoned cache entry falls through to the service
    }

    std::string last_error = "no attempts made";
    for (int attempt = 1; attempt <= cfg.max_attempts; ++attempt) {
      status.attempts = attempt;
      if (attempt > 1 && cfg.base_delay_ms > 0.0) {
        const double base = cfg.base_delay_ms * std::pow(2.0, attempt - 2);
        Rng jitter = fork_rng(cfg.jitter_seed, rec.id, static_cast<std::uint64_t>(attempt));
        const double delay = base + jitter.uniform(0.0, 0.1 * base);
        std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(delay));
      }
      VlmReply reply = transport.post(payload);
      if (reply.status != 200) {
        last_error = "transport status " + std::to_string(reply.status);
        continue;
      }
      auto parsed = parse_grounded_response(reply.body, rec.image.w, rec.image.h);
      if (parsed.status == GroundedParse::Status::ParseError) {
        last_error = parsed.error;
        continue;
      }
      if (!cfg.cache_dir.empty()) {
        std::lock_guard<std::mutex> lock(cache_mutex);
        write_text_file(cache_file, reply.body);
      }
      rec.grounded = parsed.caption;
      status.outcome = GroundStatus::Outcome::Ok;
      status.message = parsed.error;  // names the offending phrase on validation rejection
      return status;
    }
    status.outcome = GroundStatus::Outcome::Failed;
    status.message = last_error;
    return status;
  }
};

}  // namespace

std::vector<GroundStatus> caption_ground_batch(std::vector<SampleRecord>& records,
                                               const GroundingClientConfig& config,
                                               VlmTransport& transport) {
  if (config.max_attempts < 1) throw ConfigError("caption_ground_batch: max_attempts < 1");
  if (!config.cache_dir.empty()) std::filesystem::create_directories(config.cache_dir);
  std::vector<GroundStatus> statuses(records.size());
  std::atomic<std::size_t> next{0};
  std::mutex cache_mutex;
  const int workers =
      std::max(1, std::min<int>(config.max_in_flight, static_cast<int>(records.size())));
  auto worker = [&]() {
    RecordTask task;
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= records.size()) return;
      statuses[i] = task.run(records[i], config, transport, cache_mutex);
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return statuses;
}

}  // namespace flavars
