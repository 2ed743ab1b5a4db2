#include "flavars/configio.hpp"

namespace flavars {

using nlohmann::json;

json to_json(const VisionConfig& c) {
  return json{{"image_size", c.image_size}, {"patch_size", c.patch_size},
              {"channels", c.channels},     {"width", c.width},
              {"depth", c.depth},           {"heads", c.heads},
              {"proj_dim", c.proj_dim}};
}

json to_json(const TextConfig& c) {
  return json{{"vocab_size", c.vocab_size}, {"max_len", c.max_len}, {"width", c.width},
              {"depth", c.depth},           {"heads", c.heads},     {"proj_dim", c.proj_dim}};
}

json to_json(const FusionConfig& c) {
  return json{{"width", c.width}, {"depth", c.depth}, {"heads", c.heads}};
}

json to_json(const LocationConfig& c) {
  return json{{"max_degree", c.max_degree},
              {"hidden_width", c.hidden_width},
              {"hidden_depth", c.hidden_depth},
              {"proj_dim", c.proj_dim}};
}

json to_json(const MaskingConfig& c) {
  return json{{"image_mask_ratio", c.image_mask_ratio},
              {"text_mask_prob", c.text_mask_prob},
              {"mlm_actions", c.mlm_actions}};
}

json to_json(const LossWeights& c) {
  return json{{"mim", c.mim},
              {"mlm", c.mlm},
              {"itm", c.itm},
              {"contrastive_it", c.contrastive_it},
              {"contrastive_il", c.contrastive_il},
              {"contrastive_tl", c.contrastive_tl}};
}

json to_json(const TemperatureParam& c) {
  return json{{"init", c.init}, {"tau_min", c.tau_min}, {"tau_max", c.tau_max}};
}

VisionConfig vision_from_json(const json& j) {
  VisionConfig c;
  c.image_size = j.value("image_size", c.image_size);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.channels = j.value("channels", c.channels);
  c.width = j.value("width", c.width);
  c.depth = j.value("depth", c.depth);
  c.heads = j.value("heads", c.heads);
  c.proj_dim = j.value("proj_dim", c.proj_dim);
  return c;
}

TextConfig text_from_json(const json& j) {
  TextConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_len = j.value("max_len", c.max_len);
  c.width = j.value("width", c.width);
  c.depth = j.value("depth", c.depth);
  c.heads = j.value("heads", c.heads);
  c.proj_dim = j.value("proj_dim", c.proj_dim);
  return c;
}

FusionConfig fusion_from_json(const json& j) {
  FusionConfig c;
  c.width = j.value("width", c.width);
  c.depth = j.value("depth", c.depth);
  c.heads = j.value("heads", c.heads);
  return c;
}

LocationConfig location_from_json(const json& j) {
  LocationConfig c;
  c.max_degree = j.value("max_degree", c.max_degree);
  c.hidden_width = j.value("hidden_width", c.hidden_width);
  c.hidden_depth = j.value("hidden_depth", c.hidden_depth);
  c.proj_dim = j.value("proj_dim", c.proj_dim);
  return c;
}

MaskingConfig masking_from_json(const json& j) {
  MaskingConfig c;
  c.image_mask_ratio = j.value("image_mask_ratio", c.image_mask_ratio);
  c.text_mask_prob = j.value("text_mask_prob", c.text_mask_prob);
  if (j.contains("mlm_actions")) {
    const auto a = j.at("mlm_actions").get<std::vector<double>>();
    if (a.size() != 3) throw ConfigError("masking.mlm_actions must have 3 entries");
    c.mlm_actions = {a[0], a[1], a[2]};
  }
  return c;
}

LossWeights weights_from_json(const json& j) {
  LossWeights c;
  c.mim = j.value("mim", c.mim);
  c.mlm = j.value("mlm", c.mlm);
  c.itm = j.value("itm", c.itm);
  c.contrastive_it = j.value("contrastive_it", c.contrastive_it);
  c.contrastive_il = j.value("contrastive_il", c.contrastive_il);
  c.contrastive_tl = j.value("contrastive_tl", c.contrastive_tl);
  return c;
}

TemperatureParam temperature_from_json(const json& j) {
  TemperatureParam c;
  c.init = j.value("init", c.init);
  c.tau_min = j.value("tau_min", c.tau_min);
  c.tau_max = j.value("tau_max", c.tau_max);
  return c;
}

}  // namespace flavars
