#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "flavars/datapipe.hpp"

namespace flavars {

// Deterministic request payload for the caption improvement + grounding
// service: image bytes, the original caption verbatim, the instruction and
// the required structured-output schema.
std::string build_grounding_request(const SampleRecord& record);

struct GroundedParse {
  enum class Status { Ok, ParseError, ValidationError };
  Status status = Status::Ok;
  GroundedCaption caption;  // on ValidationError: text kept, groundings empty, rejected set
  std::string error;

  bool ok() const { return status == Status::Ok; }
};

// Parses a service response and validates every bbox against the image
// dimensions. Boxes are rejected, never clamped: one bad box rejects the
// whole grounding list while the improved caption is retained.
GroundedParse parse_grounded_response(const std::string& text, int image_w, int image_h);

// Transport abstraction so tests (and --mock-vlm) can run without a network.
struct VlmReply {
  int status = 0;  // 0 = transport failure
  std::string body;
};

class VlmTransport {
 public:
  virtual ~VlmTransport() = default;
  virtual VlmReply post(const std::string& payload) = 0;
};

// Real HTTP transport; endpoint like "http://host:port/path".
class HttpVlmTransport : public VlmTransport {
 public:
  HttpVlmTransport(std::string endpoint, std::string api_key);
  VlmReply post(const std::string& payload) override;

 private:
  std::string endpoint_, api_key_;
};

// Offline stand-in used by `data ground --mock-vlm`: echoes a deterministic
// improved caption with one in-bounds box derived from the record payload.
class BuiltinMockTransport : public VlmTransport {
 public:
  VlmReply post(const std::string& payload) override;
};

struct GroundingClientConfig {
  std::string endpoint;
  std::string api_key;  // resolved from FLAVARS_VLM_API_KEY by the CLI
  int max_attempts = 5;
  double base_delay_ms = 100.0;  // exponential backoff base; 0 disables sleeping
  int max_in_flight = 4;
  std::filesystem::path cache_dir;
  bool force = false;  // re-ground records that already carry a valid grounding
  std::uint64_t jitter_seed = 0;
};

struct GroundStatus {
  enum class Outcome { Ok, FromCache, Skipped, Failed };
  std::string id;
  Outcome outcome = Outcome::Failed;
  int attempts = 0;
  std::string message;
};

// Attempts every record with bounded retries (exponential backoff with
// jitter) and an on-disk response cache keyed by record id + prompt
// fingerprint. Failures are recorded per record; the batch always
// completes. Records that already carry a valid grounded caption are
// skipped unless force is set. Re-running a completed batch makes no
// transport calls.
std::vector<GroundStatus> caption_ground_batch(std::vector<SampleRecord>& records,
                                               const GroundingClientConfig& config,
                                               VlmTransport& transport);

}  // namespace flavars
