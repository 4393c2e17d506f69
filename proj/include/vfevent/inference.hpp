#pragma once

#include "vfevent/model.hpp"
#include "vfevent/serialization.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vfevent {

/// How the visual slot is filled for a query.
///   actual    decoded image_ref
///   imagine   imaginator sample from the query text
///   retrieve  pool image whose caption is most similar to the query text
///   zero      all-zero image run through the visual encoder
///   textonly  visual embedding slot zeroed (ablation L)
///   notext    text embedding slot zeroed, actual image kept (ablation V)
enum class VisualMode { kActual, kImagine, kRetrieve, kZero, kTextOnly, kNoText };

inline std::string to_string(VisualMode m) {
  switch (m) {
    case VisualMode::kActual: return "actual";
    case VisualMode::kImagine: return "imagine";
    case VisualMode::kRetrieve: return "retrieve";
    case VisualMode::kZero: return "zero";
    case VisualMode::kTextOnly: return "textonly";
    case VisualMode::kNoText: return "notext";
  }
  return "actual";
}

inline VisualMode parse_visual_mode(const std::string& s) {
  for (auto m : {VisualMode::kActual, VisualMode::kImagine, VisualMode::kRetrieve, VisualMode::kZero,
                 VisualMode::kTextOnly, VisualMode::kNoText}) {
    if (to_string(m) == s) return m;
  }
  throw Error(ErrorKind::kConfig, "unknown visual mode '" + s + "'");
}

/// Modality a model must be trained with to match a visual mode's test-time input.
inline Modality training_modality(VisualMode m) {
  if (m == VisualMode::kTextOnly) return Modality::kTextOnly;
  if (m == VisualMode::kNoText) return Modality::kVisualOnly;
  return Modality::kBoth;
}

inline double cosine_similarity(const Vector& a, const Vector& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

/// Index of the pool entry whose caption embedding is closest (cosine) to
/// `query`; ties go to the lowest index.
inline std::size_t nearest_pool_index(const Vector& query, std::span<const Vector> pool_embeddings) {
  if (pool_embeddings.empty()) throw Error(ErrorKind::kConfig, "retrieval pool is empty");
  std::size_t best = 0;
  double best_sim = cosine_similarity(query, pool_embeddings[0]);
  for (std::size_t i = 1; i < pool_embeddings.size(); ++i) {
    const double sim = cosine_similarity(query, pool_embeddings[i]);
    if (sim > best_sim) {
      best = i;
      best_sim = sim;
    }
  }
  return best;
}

inline const ImageArray& retrieve_image(const std::string& text, const std::vector<PoolEntry>& pool,
                                        const ModelState& model) {
  if (pool.empty()) throw Error(ErrorKind::kConfig, "retrieval pool is empty");
  std::vector<Vector> embeddings;
  embeddings.reserve(pool.size());
  for (const auto& entry : pool) embeddings.push_back(encode_text(model, entry.text));
  return pool[nearest_pool_index(encode_text(model, text), embeddings)].image;
}

/// Visual context for a query. Empty for textonly (the slot is zeroed instead
/// of encoding an image).
inline std::optional<ImageArray> resolve_visual_context(const Instance& query, VisualMode mode, const ModelState& model,
                                                        const std::filesystem::path& image_root,
                                                        std::uint64_t seed) {
  const int res = model.config.resolution;
  switch (mode) {
    case VisualMode::kActual:
    case VisualMode::kNoText: {
      if (!query.image_ref) {
        throw Error(ErrorKind::kConfig, "mode " + to_string(mode) + " needs an image but '" + query.id + "' has none");
      }
      return load_image(image_root / *query.image_ref, res);
    }
    case VisualMode::kImagine: {
      const auto ids = model.tokenizer.encode(query.text);
      return synthesize(model.imaginator, ids, model.imaginator.config.sample_steps, derive_seed(seed, query.id));
    }
    case VisualMode::kRetrieve:
      return retrieve_image(query.text, model.pool, model);
    case VisualMode::kZero:
      return ImageArray::zeros(res);
    case VisualMode::kTextOnly:
      return std::nullopt;
  }
  return std::nullopt;
}

inline Prediction infer(const Instance& query, VisualMode mode, const ModelState& model,
                        const std::filesystem::path& image_root, std::uint64_t seed) {
  const auto image = resolve_visual_context(query, mode, model, image_root, seed);
  return predict(model, query.text, image ? &*image : nullptr, training_modality(mode));
}

struct QueryPrediction {
  std::string id;
  Prediction prediction;
  VisualMode mode;
};

inline Json to_json(const QueryPrediction& p) {
  Json probs = Json::object();
  for (std::size_t i = 0; i < p.prediction.labels.size(); ++i) {
    probs[p.prediction.labels[i]] = p.prediction.probs[Eigen::Index(i)];
  }
  return Json{{"id", p.id}, {"predicted", p.prediction.predicted}, {"probs", probs}, {"mode", to_string(p.mode)}};
}

inline std::vector<QueryPrediction> infer_all(std::span<const Instance> queries, VisualMode mode,
                                              const ModelState& model, const std::filesystem::path& image_root,
                                              std::uint64_t seed) {
  std::vector<QueryPrediction> out;
  out.reserve(queries.size());
  for (const auto& q : queries) out.push_back({q.id, infer(q, mode, model, image_root, seed), mode});
  return out;
}

inline void write_predictions(std::span<const QueryPrediction> predictions, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  for (const auto& p : predictions) out << to_json(p).dump() << '\n';
}

}  // namespace vfevent
