#pragma once

#include "vfevent/model.hpp"

#include <nlohmann/json.hpp>

namespace vfevent {

using Json = nlohmann::ordered_json;

// Reads `key` into `out` when present, leaving the default otherwise.
template <typename T>
void read_optional(const Json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) {
    try {
      out = it->get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kSchema, std::string("field '") + key + "': " + e.what());
    }
  }
}

inline Json to_json(const EncoderConfig& c) {
  return Json{{"backend", c.backend == EncoderBackendKind::kToy ? "toy" : "adapter"},
              {"adapter_name", c.adapter_name},
              {"text_dim", c.text_dim},
              {"visual_dim", c.visual_dim},
              {"token_dim", c.token_dim},
              {"dropout", c.dropout_rate},
              {"hash_buckets", c.hash_buckets}};
}

inline EncoderConfig encoder_config_from_json(const Json& j, EncoderConfig c = {}) {
  std::string backend = c.backend == EncoderBackendKind::kToy ? "toy" : "adapter";
  read_optional(j, "backend", backend);
  if (backend == "toy") {
    c.backend = EncoderBackendKind::kToy;
  } else if (backend == "adapter") {
    c.backend = EncoderBackendKind::kAdapter;
  } else {
    throw Error(ErrorKind::kConfig, "unknown encoder backend '" + backend + "'");
  }
  read_optional(j, "adapter_name", c.adapter_name);
  read_optional(j, "text_dim", c.text_dim);
  read_optional(j, "visual_dim", c.visual_dim);
  read_optional(j, "token_dim", c.token_dim);
  read_optional(j, "dropout", c.dropout_rate);
  read_optional(j, "hash_buckets", c.hash_buckets);
  return c;
}

inline Json to_json(const ImaginatorConfig& c) {
  return Json{{"timesteps", c.timesteps},
              {"schedule", to_string(c.schedule)},
              {"omega", c.omega},
              {"target", to_string(c.target)},
              {"token_dim", c.token_dim},
              {"cond_dim", c.cond_dim},
              {"hidden_dim", c.hidden_dim},
              {"time_dim", c.time_dim},
              {"sample_steps", c.sample_steps},
              {"pretrain_steps", c.pretrain_steps},
              {"pretrain_learning_rate", c.pretrain_learning_rate},
              {"customize_steps", c.customize_steps},
              {"learning_rate", c.learning_rate},
              {"batch_size", c.batch_size}};
}

inline ImaginatorConfig imaginator_config_from_json(const Json& j, ImaginatorConfig c = {}) {
  read_optional(j, "timesteps", c.timesteps);
  std::string schedule = to_string(c.schedule);
  read_optional(j, "schedule", schedule);
  c.schedule = parse_schedule_kind(schedule);
  read_optional(j, "omega", c.omega);
  std::string target = to_string(c.target);
  read_optional(j, "target", target);
  c.target = parse_target_policy(target);
  read_optional(j, "token_dim", c.token_dim);
  read_optional(j, "cond_dim", c.cond_dim);
  read_optional(j, "hidden_dim", c.hidden_dim);
  read_optional(j, "time_dim", c.time_dim);
  read_optional(j, "sample_steps", c.sample_steps);
  read_optional(j, "pretrain_steps", c.pretrain_steps);
  read_optional(j, "pretrain_learning_rate", c.pretrain_learning_rate);
  read_optional(j, "customize_steps", c.customize_steps);
  read_optional(j, "learning_rate", c.learning_rate);
  read_optional(j, "batch_size", c.batch_size);
  return c;
}

inline Json to_json(const ModelConfig& c) {
  return Json{{"resolution", c.resolution}, {"encoder", to_json(c.encoder)}, {"imaginator", to_json(c.imaginator)}};
}

inline ModelConfig model_config_from_json(const Json& j, ModelConfig c = {}) {
  read_optional(j, "resolution", c.resolution);
  if (auto it = j.find("encoder"); it != j.end()) c.encoder = encoder_config_from_json(*it, c.encoder);
  if (auto it = j.find("imaginator"); it != j.end()) c.imaginator = imaginator_config_from_json(*it, c.imaginator);
  return c;
}

}  // namespace vfevent
