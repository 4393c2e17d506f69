#pragma once

#include "vfevent/eval.hpp"
#include "vfevent/inference.hpp"
#include "vfevent/serialization.hpp"
#include "vfevent/training.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace vfevent {

/// Everything a CLI run needs. Precedence: built-in defaults < config file <
/// command-line flags (`--override a.b=value` and the named flags).
///
/// Top-level keys:
///   dataset       JSONL manifest path (relative paths resolve against the config file)
///   image_root    directory image_ref paths resolve against (default: manifest directory)
///   labels        optional label-list sidecar fixing the class order
///   output_dir    where checkpoints, logs, predictions and reports go (default "runs")
///   seed          global seed; every random stream derives from it
///   mode          visual mode for `infer` (default "imagine")
///   modes         visual modes for `eval` (default ["textonly", "imagine", "retrieve"])
///   shots         K values for `eval` (default [5, 10, 15, 20])
///   seeds         seeds for `eval` (default [0])
///   include_none  include "none" in macro averages (default false)
///   model         {resolution, encoder{...}, imaginator{...}}
///   train         {learning_rate, batch_size, epochs, beta, mode, k_shots, n_ways,
///                  freeze_policy, modality, checkpoint_every}
struct RunConfig {
  std::filesystem::path dataset;
  std::optional<std::filesystem::path> image_root;
  std::optional<std::filesystem::path> labels;
  std::filesystem::path output_dir = "runs";
  std::uint64_t seed = 0;
  VisualMode mode = VisualMode::kImagine;
  std::vector<VisualMode> modes{VisualMode::kTextOnly, VisualMode::kImagine, VisualMode::kRetrieve};
  std::vector<std::size_t> shots{5, 10, 15, 20};
  std::vector<std::uint64_t> seeds{0};
  bool include_none = false;
  ModelConfig model;
  TrainConfig train;

  std::filesystem::path resolved_image_root() const {
    return image_root ? *image_root : dataset.parent_path();
  }

  ExperimentConfig experiment() const { return ExperimentConfig{shots, modes, seeds, include_none}; }
};

inline Json to_json(const RunConfig& c) {
  Json modes = Json::array();
  for (auto m : c.modes) modes.push_back(to_string(m));
  Json train = to_json(c.train);
  train.erase("seed");  // always the global seed
  return Json{{"dataset", c.dataset.string()},
              {"image_root", c.image_root ? Json(c.image_root->string()) : Json(nullptr)},
              {"labels", c.labels ? Json(c.labels->string()) : Json(nullptr)},
              {"output_dir", c.output_dir.string()},
              {"seed", c.seed},
              {"mode", to_string(c.mode)},
              {"modes", modes},
              {"shots", c.shots},
              {"seeds", c.seeds},
              {"include_none", c.include_none},
              {"model", to_json(c.model)},
              {"train", train}};
}

namespace detail {

inline void check_known_keys(const Json& defaults, const Json& given, const std::string& prefix) {
  if (!given.is_object()) throw Error(ErrorKind::kConfig, "config section '" + prefix + "' must be an object");
  for (auto it = given.begin(); it != given.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    auto d = defaults.find(it.key());
    if (d == defaults.end()) throw Error(ErrorKind::kConfig, "unknown config key '" + key + "'");
    if (d->is_object()) check_known_keys(*d, *it, key);
  }
}

inline void merge_into(Json& base, const Json& patch) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (it->is_object() && base.contains(it.key()) && base[it.key()].is_object()) {
      merge_into(base[it.key()], *it);
    } else {
      base[it.key()] = *it;
    }
  }
}

inline std::filesystem::path resolve_against(const std::filesystem::path& base, const std::filesystem::path& p) {
  if (p.empty() || p.is_absolute()) return p;
  return (base / p).lexically_normal();
}

}  // namespace detail

/// Applies "a.b.c=value" to `doc`. The value is parsed as JSON when possible
/// and kept as a string otherwise.
inline void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(ErrorKind::kConfig, "override must look like key=value, got '" + assignment + "'");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  Json value = Json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  Json* node = &doc;
  std::stringstream keys(path);
  std::string key;
  std::vector<std::string> parts;
  while (std::getline(keys, key, '.')) parts.push_back(key);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i])) {
      throw Error(ErrorKind::kConfig, "unknown config key '" + path + "'");
    }
    node = &(*node)[parts[i]];
  }
  *node = value;
}

inline RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  std::string dataset;
  read_optional(j, "dataset", dataset);
  c.dataset = dataset;
  if (auto it = j.find("image_root"); it != j.end() && !it->is_null()) c.image_root = it->get<std::string>();
  if (auto it = j.find("labels"); it != j.end() && !it->is_null()) c.labels = it->get<std::string>();
  std::string out = c.output_dir.string();
  read_optional(j, "output_dir", out);
  c.output_dir = out;
  read_optional(j, "seed", c.seed);
  std::string mode = to_string(c.mode);
  read_optional(j, "mode", mode);
  c.mode = parse_visual_mode(mode);
  std::vector<std::string> modes;
  read_optional(j, "modes", modes);
  if (j.contains("modes")) {
    c.modes.clear();
    for (const auto& m : modes) c.modes.push_back(parse_visual_mode(m));
  }
  read_optional(j, "shots", c.shots);
  read_optional(j, "seeds", c.seeds);
  read_optional(j, "include_none", c.include_none);
  if (auto it = j.find("model"); it != j.end()) c.model = model_config_from_json(*it, c.model);
  if (auto it = j.find("train"); it != j.end()) c.train = train_config_from_json(*it, c.train);
  c.train.seed = c.seed;
  return c;
}

/// Layers defaults, the optional config file and overrides, then resolves
/// relative paths against the config file's directory (or the working
/// directory when there is no file).
inline RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                                 const std::vector<std::string>& overrides = {}) {
  const Json defaults = to_json(RunConfig{});
  Json doc = defaults;
  std::filesystem::path base = std::filesystem::current_path();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw Error(ErrorKind::kConfig, "cannot read config file " + file->string());
    Json given = Json::parse(in, nullptr, false);
    if (given.is_discarded()) throw Error(ErrorKind::kParse, "config file " + file->string() + " is not valid JSON");
    detail::check_known_keys(defaults, given, "");
    detail::merge_into(doc, given);
    base = std::filesystem::absolute(*file).parent_path();
  }
  for (const auto& o : overrides) apply_override(doc, o);

  RunConfig c;
  try {
    c = run_config_from_json(doc);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfig, std::string("bad config value: ") + e.what());
  }
  c.dataset = detail::resolve_against(base, c.dataset);
  if (c.image_root) c.image_root = detail::resolve_against(base, *c.image_root);
  if (c.labels) c.labels = detail::resolve_against(base, *c.labels);
  // Output paths are relative to the working directory, like any CLI output flag.
  c.model.validate();
  c.train.validate();
  if (c.shots.empty()) throw Error(ErrorKind::kConfig, "shots must not be empty");
  if (c.seeds.empty()) throw Error(ErrorKind::kConfig, "seeds must not be empty");
  if (c.modes.empty()) throw Error(ErrorKind::kConfig, "modes must not be empty");
  return c;
}

/// Checks that every referenced input path exists.
inline void require_paths(const RunConfig& c) {
  if (c.dataset.empty()) throw Error(ErrorKind::kConfig, "no dataset configured");
  if (!std::filesystem::exists(c.dataset)) throw Error(ErrorKind::kConfig, "dataset not found: " + c.dataset.string());
  if (c.image_root && !std::filesystem::is_directory(*c.image_root)) {
    throw Error(ErrorKind::kConfig, "image_root is not a directory: " + c.image_root->string());
  }
  if (c.labels && !std::filesystem::exists(*c.labels)) {
    throw Error(ErrorKind::kConfig, "label list not found: " + c.labels->string());
  }
}

}  // namespace vfevent
