#pragma once

#include <json.hpp>

#include "flavars/encoders.hpp"
#include "flavars/masking.hpp"
#include "flavars/objectives.hpp"

namespace flavars {

// JSON (de)serialization for every config struct. Readers use .value() with
// the struct defaults so partial configs are valid; unknown-key rejection is
// the CLI's job.

nlohmann::json to_json(const VisionConfig& c);
nlohmann::json to_json(const TextConfig& c);
nlohmann::json to_json(const FusionConfig& c);
nlohmann::json to_json(const LocationConfig& c);
nlohmann::json to_json(const MaskingConfig& c);
nlohmann::json to_json(const LossWeights& c);
nlohmann::json to_json(const TemperatureParam& c);

VisionConfig vision_from_json(const nlohmann::json& j);
TextConfig text_from_json(const nlohmann::json& j);
FusionConfig fusion_from_json(const nlohmann::json& j);
LocationConfig location_from_json(const nlohmann::json& j);
MaskingConfig masking_from_json(const nlohmann::json& j);
LossWeights weights_from_json(const nlohmann::json& j);
TemperatureParam temperature_from_json(const nlohmann::json& j);

}  // namespace flavars
