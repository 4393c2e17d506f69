#pragma once

#include "vfevent/core.hpp"
#include "vfevent/image.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace vfevent {

struct Instance {
  std::string id;
  std::string text;
  std::optional<std::string> image_ref;  // relative to the dataset's image root
  std::string label;                     // event type, or "none"

  bool is_none() const { return label == kNoneLabel; }
};

struct Dataset {
  std::vector<Instance> instances;
  std::vector<std::string> event_types;  // excludes "none"; order defines label indices
  std::filesystem::path image_root;

  std::size_t num_classes() const { return event_types.size() + 1; }
};

struct ValidationIssue {
  ErrorKind kind;
  std::size_t line = 0;  // 1-based manifest line, 0 when not tied to one
  std::string id;
  std::string message;

  std::string describe() const {
    std::string out;
    if (line > 0) out += "line " + std::to_string(line) + ": ";
    if (!id.empty()) out += "id '" + id + "': ";
    return out + message;
  }
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;
  std::optional<Dataset> dataset;  // set when the manifest parsed, even with issues

  bool ok() const { return issues.empty(); }
};

/// Reads the optional sidecar listing canonical event-type order, one name per line.
inline std::vector<std::string> read_label_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open label list " + path.string());
  std::vector<std::string> labels;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    if (line.empty()) continue;
    if (line == kNoneLabel) continue;
    labels.push_back(line);
  }
  return labels;
}

/// Parses and checks a JSONL manifest, collecting every violation instead of
/// stopping at the first. With `decode_images` each referenced image is also
/// decoded at `resolution`.
inline ValidationReport validate_manifest(const std::filesystem::path& manifest,
                                          const std::filesystem::path& image_root,
                                          const std::optional<std::filesystem::path>& labels_path = {},
                                          bool decode_images = false, int resolution = 32) {
  ValidationReport report;
  std::ifstream in(manifest);
  if (!in) {
    report.issues.push_back({ErrorKind::kIo, 0, "", "cannot open manifest " + manifest.string()});
    return report;
  }

  Dataset dataset;
  dataset.image_root = image_root;
  std::map<std::string, std::size_t> first_line_of_id;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      report.issues.push_back({ErrorKind::kParse, line_no, "", std::string("malformed JSON (") + e.what() + ")"});
      continue;
    }
    if (!record.is_object()) {
      report.issues.push_back({ErrorKind::kSchema, line_no, "", "record is not a JSON object"});
      continue;
    }
    auto string_field = [&](const char* key, bool nullable) -> std::optional<std::string> {
      auto it = record.find(key);
      if (it == record.end()) {
        if (nullable) return std::nullopt;
        report.issues.push_back({ErrorKind::kSchema, line_no, "", std::string("missing field '") + key + "'"});
        throw std::invalid_argument(key);
      }
      if (it->is_null() && nullable) return std::nullopt;
      if (!it->is_string()) {
        report.issues.push_back({ErrorKind::kSchema, line_no, "",
                                 std::string("field '") + key + "' must be a string, got " + it->type_name()});
        throw std::invalid_argument(key);
      }
      return it->get<std::string>();
    };
    Instance inst;
    try {
      inst.id = *string_field("id", false);
      inst.text = *string_field("text", false);
      inst.label = *string_field("event_type", false);
      inst.image_ref = string_field("image", true);
    } catch (const std::invalid_argument&) {
      continue;
    }
    if (auto [it, inserted] = first_line_of_id.emplace(inst.id, line_no); !inserted) {
      report.issues.push_back({ErrorKind::kValidation, line_no, inst.id,
                               "duplicate id (first seen on line " + std::to_string(it->second) + ")"});
    }
    if (inst.text.find_first_not_of(" \t\r\n") == std::string::npos) {
      report.issues.push_back({ErrorKind::kValidation, line_no, inst.id, "empty text"});
    }
    if (inst.label.empty()) {
      report.issues.push_back({ErrorKind::kValidation, line_no, inst.id, "empty event_type"});
    }
    if (inst.image_ref) {
      const auto full = image_root / *inst.image_ref;
      if (!std::filesystem::exists(full)) {
        report.issues.push_back({ErrorKind::kValidation, line_no, inst.id,
                                 "dangling image reference " + *inst.image_ref});
      } else if (decode_images) {
        try {
          (void)load_image(full, resolution);
        } catch (const Error& e) {
          report.issues.push_back({ErrorKind::kDecode, line_no, inst.id, e.what()});
        }
      }
    }
    dataset.instances.push_back(std::move(inst));
  }

  if (dataset.instances.empty() && report.issues.empty()) {
    report.issues.push_back({ErrorKind::kValidation, 0, "", "empty dataset"});
    return report;
  }

  std::set<std::string> seen_labels;
  for (const auto& inst : dataset.instances) {
    if (!inst.is_none() && !inst.label.empty()) seen_labels.insert(inst.label);
  }
  if (labels_path) {
    dataset.event_types = read_label_list(*labels_path);
    std::set<std::string> declared;
    for (const auto& name : dataset.event_types) {
      if (!declared.insert(name).second) {
        report.issues.push_back({ErrorKind::kValidation, 0, "", "duplicate event type '" + name + "' in label list"});
      }
    }
    for (const auto& inst : dataset.instances) {
      if (!inst.is_none() && !inst.label.empty() && !declared.count(inst.label)) {
        report.issues.push_back({ErrorKind::kValidation, 0, inst.id,
                                 "event_type '" + inst.label + "' is not in the label list"});
      }
    }
  } else {
    dataset.event_types.assign(seen_labels.begin(), seen_labels.end());
  }
  report.dataset = std::move(dataset);
  return report;
}

/// Loads a manifest, throwing on the first category of violation found. All
/// offending records of that category (up to 20) are named in the message.
inline Dataset load_dataset(const std::filesystem::path& manifest,
                            std::optional<std::filesystem::path> image_root = {},
                            const std::optional<std::filesystem::path>& labels_path = {}) {
  const auto root = image_root.value_or(manifest.parent_path());
  ValidationReport report = validate_manifest(manifest, root, labels_path);
  if (!report.ok()) {
    const ErrorKind kind = report.issues.front().kind;
    std::string message;
    std::size_t count = 0;
    for (const auto& issue : report.issues) {
      if (issue.kind != kind) continue;
      if (++count > 20) continue;
      if (!message.empty()) message += "; ";
      message += issue.describe();
    }
    if (count > 20) message += "; and " + std::to_string(count - 20) + " more";
    throw Error(kind, message);
  }
  return std::move(*report.dataset);
}

/// Position of `label` in the class list: event types in dataset order, "none" last.
inline std::size_t label_index(const std::vector<std::string>& event_types, std::string_view label) {
  if (label == kNoneLabel) return event_types.size();
  auto it = std::find(event_types.begin(), event_types.end(), label);
  if (it == event_types.end()) {
    throw Error(ErrorKind::kInput, "unknown label '" + std::string(label) + "'");
  }
  return std::size_t(it - event_types.begin());
}

inline std::vector<std::string> class_names(const std::vector<std::string>& event_types) {
  std::vector<std::string> names = event_types;
  names.emplace_back(kNoneLabel);
  return names;
}

/// An (N+1)-way K-shot support set plus the remaining query instances.
struct Episode {
  std::vector<Instance> support;  // grouped by label, in class-index order
  std::vector<Instance> queries;
  std::vector<std::string> event_types;  // the N selected types
  std::size_t n_ways = 0;
  std::size_t k_shots = 0;
  std::uint64_t seed = 0;
  std::filesystem::path image_root;

  std::vector<std::string> labels() const { return class_names(event_types); }
};

inline Episode sample_episode(const Dataset& dataset, std::size_t n_ways, std::size_t k_shots,
                              std::uint64_t seed) {
  if (k_shots == 0) throw Error(ErrorKind::kSampling, "k_shots must be at least 1");
  if (n_ways == 0) throw Error(ErrorKind::kSampling, "n_ways must be at least 1");
  if (n_ways > dataset.event_types.size()) {
    throw Error(ErrorKind::kSampling, "n_ways=" + std::to_string(n_ways) + " exceeds the " +
                                          std::to_string(dataset.event_types.size()) +
                                          " event types in the dataset");
  }

  Episode episode;
  episode.n_ways = n_ways;
  episode.k_shots = k_shots;
  episode.seed = seed;
  episode.image_root = dataset.image_root;

  if (n_ways == dataset.event_types.size()) {
    episode.event_types = dataset.event_types;
  } else {
    std::vector<std::size_t> order(dataset.event_types.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, "episode.ways"));
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(n_ways);
    std::sort(order.begin(), order.end());
    for (auto i : order) episode.event_types.push_back(dataset.event_types[i]);
  }

  const auto labels = episode.labels();
  std::set<std::string> chosen_ids;
  std::string shortfalls;
  std::vector<std::vector<std::size_t>> picks(labels.size());
  for (std::size_t c = 0; c < labels.size(); ++c) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < dataset.instances.size(); ++i) {
      if (dataset.instances[i].label == labels[c]) pool.push_back(i);
    }
    if (pool.size() < k_shots) {
      if (!shortfalls.empty()) shortfalls += "; ";
      shortfalls += "label '" + labels[c] + "' has " + std::to_string(pool.size()) + " instances, short by " +
                    std::to_string(k_shots - pool.size());
      continue;
    }
    Rng rng(derive_seed(seed, "episode.label." + labels[c]));
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(k_shots);
    picks[c] = std::move(pool);
  }
  if (!shortfalls.empty()) throw Error(ErrorKind::kSampling, shortfalls);

  for (const auto& pick : picks) {
    for (auto i : pick) {
      episode.support.push_back(dataset.instances[i]);
      chosen_ids.insert(dataset.instances[i].id);
    }
  }
  const std::set<std::string> label_set(labels.begin(), labels.end());
  for (const auto& inst : dataset.instances) {
    if (!chosen_ids.count(inst.id) && label_set.count(inst.label)) episode.queries.push_back(inst);
  }
  return episode;
}

/// The image paired with `inst`, decoded at `resolution`; std::nullopt when none is referenced.
inline std::optional<ImageArray> instance_image(const Instance& inst, const std::filesystem::path& image_root,
                                                int resolution) {
  if (!inst.image_ref) return std::nullopt;
  return load_image(image_root / *inst.image_ref, resolution);
}

}  // namespace vfevent
