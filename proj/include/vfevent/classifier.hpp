#pragma once

#include "vfevent/core.hpp"
#include "vfevent/params.hpp"

#include <string>
#include <vector>

namespace vfevent {

/// Single affine layer from the fused representation to N+1 logits.
class ClassifierHead {
 public:
  Param weight;
  Param bias;

  ClassifierHead() = default;
  ClassifierHead(int input_dim, int num_classes)
      : weight("head.weight", num_classes, input_dim), bias("head.bias", num_classes, 1) {}

  void init(Rng& rng) {
    const double s = 1.0 / std::sqrt(double(weight.value.cols()));
    init_uniform(weight, s, rng);
    init_uniform(bias, s, rng);
  }

  int input_dim() const { return int(weight.value.cols()); }
  int num_classes() const { return int(weight.value.rows()); }
  ParamList params() { return {&weight, &bias}; }

  Vector logits(const Vector& h) const {
    if (h.size() != weight.value.cols()) {
      throw Error(ErrorKind::kInput, "fused representation has " + std::to_string(h.size()) +
                                         " entries, head expects " + std::to_string(weight.value.cols()));
    }
    Vector z = weight.value * h + bias.value.col(0);
    require_finite(z, "classifier logits");
    return z;
  }

  /// Accumulates parameter gradients and returns d loss / d h.
  Vector backward(const Vector& h, const Vector& grad_logits) {
    weight.grad.noalias() += grad_logits * h.transpose();
    bias.grad.col(0) += grad_logits;
    return weight.value.transpose() * grad_logits;
  }
};

inline double log_sum_exp(const Vector& z) {
  const double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

inline Vector softmax(const Vector& z) {
  Vector p = (z.array() - z.maxCoeff()).exp().matrix();
  return p / p.sum();
}

/// Softmax distribution over the event types plus "none".
inline Vector class_probs(const Vector& h, const ClassifierHead& head) { return softmax(head.logits(h)); }

/// -log p(gold) computed from logits in log-sum-exp form.
inline double cross_entropy(const Vector& logits, std::size_t gold) {
  if (gold >= std::size_t(logits.size())) throw Error(ErrorKind::kInput, "gold label index out of range");
  return log_sum_exp(logits) - logits[Eigen::Index(gold)];
}

/// Lowest index among the maximal entries.
inline std::size_t argmax_lowest(const Vector& values) {
  std::size_t best = 0;
  for (Eigen::Index i = 1; i < values.size(); ++i) {
    if (values[i] > values[Eigen::Index(best)]) best = std::size_t(i);
  }
  return best;
}

struct Prediction {
  Vector probs;
  std::size_t index = 0;
  std::string predicted;
  std::vector<std::string> labels;
  double logit_margin = 0.0;  // top-1 minus top-2 probability
};

inline Prediction make_prediction(const Vector& probs, const std::vector<std::string>& labels) {
  if (probs.size() != Eigen::Index(labels.size())) throw Error(ErrorKind::kInput, "probability / label count mismatch");
  Prediction out;
  out.probs = probs;
  out.index = argmax_lowest(probs);
  out.predicted = labels[out.index];
  out.labels = labels;
  double second = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    if (std::size_t(i) != out.index) second = std::max(second, probs[i]);
  }
  out.logit_margin = probs.size() > 1 ? probs[Eigen::Index(out.index)] - second : probs[0];
  return out;
}

/// L_class + beta * L_visual.
inline double combined_loss(double class_term, double visual_term, double beta) {
  require_finite(class_term, "class loss");
  require_finite(visual_term, "visual loss");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw Error(ErrorKind::kInput, "beta must be finite and >= 0");
  return class_term + beta * visual_term;
}

}  // namespace vfevent
