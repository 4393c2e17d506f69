#pragma once

#include "vfevent/core.hpp"
#include "vfevent/image.hpp"
#include "vfevent/params.hpp"

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

namespace vfevent {

enum class EncoderBackendKind { kToy, kAdapter };

struct EncoderConfig {
  int text_dim = 768;
  int visual_dim = 768;
  int token_dim = 768;          // width of the toy text embedding table
  double dropout_rate = 0.3;    // textual encoder only
  std::size_t hash_buckets = 4096;
  EncoderBackendKind backend = EncoderBackendKind::kToy;
  std::string adapter_name;     // registry key when backend == kAdapter

  void validate() const {
    if (text_dim <= 0 || visual_dim <= 0 || token_dim <= 0) {
      throw Error(ErrorKind::kConfig, "encoder dimensions must be positive");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
      throw Error(ErrorKind::kConfig, "dropout_rate must lie in [0, 1)");
    }
  }
};

/// Bag-of-embeddings text encoder: mean of token rows, then one affine map.
/// Used both as the classifier's language encoder and as the imaginator's
/// conditioning encoder.
class TextEncoder {
 public:
  Param embedding;
  Param weight;
  Param bias;

  TextEncoder() = default;
  TextEncoder(const std::string& prefix, std::size_t table_rows, int token_dim, int out_dim)
      : embedding(prefix + ".embedding", Eigen::Index(table_rows), token_dim),
        weight(prefix + ".weight", out_dim, token_dim),
        bias(prefix + ".bias", out_dim, 1) {}

  void init(Rng& rng) {
    init_uniform(embedding, 1.0, rng);
    init_uniform(weight, 1.0 / std::sqrt(double(weight.value.cols())), rng);
    init_uniform(bias, 1.0 / std::sqrt(double(weight.value.cols())), rng);
  }

  int out_dim() const { return int(weight.value.rows()); }
  ParamList params() { return {&embedding, &weight, &bias}; }

  Vector pooled(std::span<const int> ids) const {
    if (ids.empty()) throw Error(ErrorKind::kInput, "empty token sequence");
    Vector e = Vector::Zero(embedding.value.cols());
    for (int id : ids) {
      if (id < 0 || id >= embedding.value.rows()) {
        throw Error(ErrorKind::kInput, "token id " + std::to_string(id) + " outside embedding table");
      }
      e += embedding.value.row(id).transpose();
    }
    return e / double(ids.size());
  }

  /// `dropout_scale` is empty in evaluation mode; otherwise an elementwise mask
  /// (0 or 1/(1-p)) applied to the output.
  Vector forward(std::span<const int> ids, const Vector& dropout_scale = {}) const {
    Vector h = weight.value * pooled(ids) + bias.value.col(0);
    if (dropout_scale.size() > 0) h = h.cwiseProduct(dropout_scale);
    return h;
  }

  void backward(std::span<const int> ids, const Vector& dropout_scale, const Vector& grad_out) {
    const Vector g = dropout_scale.size() > 0 ? Vector(grad_out.cwiseProduct(dropout_scale)) : grad_out;
    const Vector e = pooled(ids);
    weight.grad.noalias() += g * e.transpose();
    bias.grad.col(0) += g;
    const Vector de = weight.value.transpose() * g / double(ids.size());
    for (int id : ids) embedding.grad.row(id) += de.transpose();
  }
};

/// Bias-free linear map over the flattened image.
class VisualEncoder {
 public:
  Param weight;

  VisualEncoder() = default;
  VisualEncoder(const std::string& prefix, int resolution, int out_dim)
      : weight(prefix + ".weight", out_dim, 3 * resolution * resolution), resolution_(resolution) {}

  void init(Rng& rng) { init_uniform(weight, 1.0 / std::sqrt(double(weight.value.cols())), rng); }

  int out_dim() const { return int(weight.value.rows()); }
  int resolution() const { return resolution_; }
  ParamList params() { return {&weight}; }

  Vector forward(const ImageArray& image) const {
    if (image.height != resolution_ || image.width != resolution_) {
      throw Error(ErrorKind::kInput, "image resolution " + std::to_string(image.height) + "x" +
                                         std::to_string(image.width) + " does not match encoder resolution " +
                                         std::to_string(resolution_));
    }
    return weight.value * image.pixels;
  }

  void backward(const ImageArray& image, const Vector& grad_out) {
    weight.grad.noalias() += grad_out * image.pixels.transpose();
  }

 private:
  int resolution_ = 0;
};

/// Joint representation: text embedding followed by visual embedding.
inline Vector fuse(const Vector& text, const Vector& visual) {
  require_finite(text, "text embedding");
  require_finite(visual, "visual embedding");
  Vector h(text.size() + visual.size());
  h << text, visual;
  return h;
}

/// Inverse of fuse for a known text width.
inline std::pair<Vector, Vector> split_fused(const Vector& fused, Eigen::Index text_dim) {
  if (text_dim < 0 || text_dim > fused.size()) throw Error(ErrorKind::kInput, "split point out of range");
  return {fused.head(text_dim), fused.tail(fused.size() - text_dim)};
}

inline Vector dropout_scale(int dim, double rate, Rng& rng) {
  Vector mask = Vector::Ones(dim);
  if (rate <= 0.0) return mask;
  std::bernoulli_distribution keep(1.0 - rate);
  for (int i = 0; i < dim; ++i) mask[i] = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
  return mask;
}

/// Contract for pretrained dual encoders plugged in behind the toy ones. An
/// adapter is a frozen feature extractor; only the classifier head trains on
/// top of it.
class EncoderBackend {
 public:
  virtual ~EncoderBackend() = default;
  virtual int text_dim() const = 0;
  virtual int visual_dim() const = 0;
  virtual std::vector<Vector> encode_texts(std::span<const std::string> texts) const = 0;
  virtual std::vector<Vector> encode_images(std::span<const ImageArray> images) const = 0;
};

using BackendFactory = std::function<std::shared_ptr<EncoderBackend>(const EncoderConfig&)>;

class BackendRegistry {
 public:
  static BackendRegistry& instance() {
    static BackendRegistry registry;
    return registry;
  }

  void add(const std::string& name, BackendFactory factory) {
    std::lock_guard lock(mutex_);
    factories_[name] = std::move(factory);
  }

  std::shared_ptr<EncoderBackend> create(const std::string& name, const EncoderConfig& config) const {
    std::lock_guard lock(mutex_);
    auto it = factories_.find(name);
    if (it == factories_.end()) {
      throw Error(ErrorKind::kConfig, "no encoder backend registered under '" + name + "'");
    }
    auto backend = it->second(config);
    if (backend->text_dim() != config.text_dim || backend->visual_dim() != config.visual_dim) {
      throw Error(ErrorKind::kConfig, "backend '" + name + "' dimensions disagree with the encoder config");
    }
    return backend;
  }

  bool contains(const std::string& name) const {
    std::lock_guard lock(mutex_);
    return factories_.count(name) > 0;
  }

 private:
  mutable std::mutex mutex_;
  std::map<std::string, BackendFactory> factories_;
};

}  // namespace vfevent
