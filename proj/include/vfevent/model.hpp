#pragma once

#include "vfevent/classifier.hpp"
#include "vfevent/core.hpp"
#include "vfevent/data.hpp"
#include "vfevent/encoders.hpp"
#include "vfevent/imaginator.hpp"
#include "vfevent/tokenizer.hpp"

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vfevent {

struct ModelConfig {
  int resolution = 32;
  EncoderConfig encoder;
  ImaginatorConfig imaginator;

  void validate() const {
    if (resolution <= 0) throw Error(ErrorKind::kConfig, "resolution must be positive");
    encoder.validate();
    imaginator.validate();
  }
};

/// Which embedding slots are populated; the absent one is a zero vector.
enum class Modality { kBoth, kTextOnly, kVisualOnly };

inline std::string to_string(Modality m) {
  switch (m) {
    case Modality::kBoth: return "both";
    case Modality::kTextOnly: return "text_only";
    case Modality::kVisualOnly: return "visual_only";
  }
  return "both";
}

inline Modality parse_modality(const std::string& s) {
  if (s == "both") return Modality::kBoth;
  if (s == "text_only") return Modality::kTextOnly;
  if (s == "visual_only") return Modality::kVisualOnly;
  throw Error(ErrorKind::kConfig, "unknown modality '" + s + "'");
}

/// A support (text, image) pair kept for retrieval at inference time.
struct PoolEntry {
  std::string id;
  std::string text;
  ImageArray image;
};

/// Everything needed to classify and to imagine: encoders, head, imaginator,
/// vocabulary, class list, and the retrieval pool.
class ModelState {
 public:
  ModelConfig config;
  std::vector<std::string> labels;  // event types then "none"
  Tokenizer tokenizer;
  TextEncoder text;
  VisualEncoder visual;
  ClassifierHead head;
  Imaginator imaginator;
  std::vector<PoolEntry> pool;
  std::shared_ptr<EncoderBackend> adapter;  // set when the encoder backend is an adapter

  bool uses_adapter() const { return adapter != nullptr; }
  int text_dim() const { return config.encoder.text_dim; }
  int visual_dim() const { return config.encoder.visual_dim; }

  ParamList encoder_params() {
    if (uses_adapter()) return {};
    ParamList out = text.params();
    for (Param* p : visual.params()) out.push_back(p);
    return out;
  }

  ParamList classifier_params() {
    ParamList out = encoder_params();
    for (Param* p : head.params()) out.push_back(p);
    return out;
  }

  ParamList params() {
    ParamList out = classifier_params();
    for (Param* p : imaginator.params()) out.push_back(p);
    return out;
  }

  std::size_t label_of(std::string_view name) const {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == name) return i;
    }
    throw Error(ErrorKind::kInput, "label '" + std::string(name) + "' is not known to the model");
  }
};

/// Fresh parameters for the given class list. The vocabulary is built from
/// `vocabulary_texts` (the training support set).
inline ModelState init_model(const ModelConfig& config, const std::vector<std::string>& event_types,
                             std::span<const std::string> vocabulary_texts, std::uint64_t seed) {
  config.validate();
  ModelState model;
  model.config = config;
  model.labels = class_names(event_types);
  model.tokenizer = Tokenizer::build(vocabulary_texts, config.encoder.hash_buckets);
  const std::size_t rows = model.tokenizer.table_size();
  if (rows == 0) throw Error(ErrorKind::kConfig, "empty vocabulary and no hash buckets");

  if (config.encoder.backend == EncoderBackendKind::kAdapter) {
    model.adapter = BackendRegistry::instance().create(config.encoder.adapter_name, config.encoder);
  } else {
    model.text = TextEncoder("encoder.text", rows, config.encoder.token_dim, config.encoder.text_dim);
    model.visual = VisualEncoder("encoder.visual", config.resolution, config.encoder.visual_dim);
    Rng rng(derive_seed(seed, "init.encoders"));
    model.text.init(rng);
    model.visual.init(rng);
  }
  model.head = ClassifierHead(config.encoder.text_dim + config.encoder.visual_dim, int(model.labels.size()));
  Rng head_rng(derive_seed(seed, "init.head"));
  model.head.init(head_rng);

  model.imaginator = Imaginator(config.imaginator, config.resolution, rows);
  Rng imag_rng(derive_seed(seed, "init.imaginator"));
  model.imaginator.init(imag_rng);
  model.imaginator.apply_freeze_policy(FreezePolicy::kConditioningOnly);
  return model;
}

/// Language-encoder output. A non-empty `dropout` puts the toy encoder in
/// training mode with that mask.
inline Vector encode_text(const ModelState& model, const std::string& text, const Vector& dropout = {}) {
  if (model.uses_adapter()) {
    const std::string texts[] = {text};
    if (tokenize(text).empty()) throw Error(ErrorKind::kInput, "empty token sequence");
    return model.adapter->encode_texts(texts).at(0);
  }
  return model.text.forward(model.tokenizer.encode(text), dropout);
}

inline Vector encode_image(const ModelState& model, const ImageArray& image) {
  if (model.uses_adapter()) {
    validate_image(image, model.config.resolution);
    const ImageArray images[] = {image};
    return model.adapter->encode_images(images).at(0);
  }
  return model.visual.forward(image);
}

/// Fused representation with slots dropped per `modality`. A missing image
/// leaves the visual slot zero.
inline Vector fused_representation(const ModelState& model, const std::string& text, const ImageArray* image,
                                   Modality modality, const Vector& dropout = {}) {
  const Vector h_s = modality == Modality::kVisualOnly ? Vector::Zero(model.text_dim()) : encode_text(model, text, dropout);
  const Vector h_v = (modality == Modality::kTextOnly || image == nullptr) ? Vector::Zero(model.visual_dim())
                                                                            : encode_image(model, *image);
  return fuse(h_s, h_v);
}

/// argmax over event types of P(e | s, v); ties go to the lowest label index.
inline Prediction predict(const ModelState& model, const std::string& text, const ImageArray* image,
                          Modality modality = Modality::kBoth) {
  return make_prediction(class_probs(fused_representation(model, text, image, modality), model.head), model.labels);
}

inline std::string predict_event(const ModelState& model, const std::string& text, const ImageArray& image) {
  return predict(model, text, &image).predicted;
}

/// One labelled item for the classification loss. `dropout` empty = eval mode.
struct ClassExample {
  std::string text;
  const ImageArray* image = nullptr;
  std::size_t label = 0;
  Vector dropout;
};

/// Mean -log P(gold | s, v) over the batch. With `grad_scale` != 0, also
/// accumulates grad_scale * d(mean loss)/d(theta) into the classifier parameters.
inline double class_loss_backward(ModelState& model, std::span<const ClassExample> batch, Modality modality,
                                  double grad_scale) {
  if (batch.empty()) throw Error(ErrorKind::kInput, "empty batch");
  double total = 0.0;
  const double per_item = grad_scale / double(batch.size());
  for (const auto& ex : batch) {
    const bool use_text = modality != Modality::kVisualOnly;
    const bool use_visual = modality != Modality::kTextOnly && ex.image != nullptr;
    std::vector<int> ids;
    Vector h_s = Vector::Zero(model.text_dim());
    if (use_text) {
      if (model.uses_adapter()) {
        h_s = encode_text(model, ex.text);
      } else {
        ids = model.tokenizer.encode(ex.text);
        h_s = model.text.forward(ids, ex.dropout);
      }
    }
    const Vector h_v = use_visual ? encode_image(model, *ex.image) : Vector::Zero(model.visual_dim());
    const Vector h = fuse(h_s, h_v);
    const Vector z = model.head.logits(h);
    total += cross_entropy(z, ex.label);
    if (per_item == 0.0) continue;
    Vector dz = softmax(z);
    dz[Eigen::Index(ex.label)] -= 1.0;
    const Vector dh = model.head.backward(h, per_item * dz);
    if (model.uses_adapter()) continue;
    if (use_text) model.text.backward(ids, ex.dropout, dh.head(model.text_dim()));
    if (use_visual) model.visual.backward(*ex.image, dh.tail(model.visual_dim()));
  }
  const double loss = total / double(batch.size());
  require_finite(loss, "class loss");
  return loss;
}

inline double class_loss(ModelState& model, std::span<const ClassExample> batch, Modality modality = Modality::kBoth) {
  return class_loss_backward(model, batch, modality, 0.0);
}

}  // namespace vfevent
