#pragma once

#include "vfevent/core.hpp"

#include <string>
#include <vector>

namespace vfevent {

/// A named parameter tensor with its gradient accumulator. Vectors are stored
/// as single-column matrices.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

  Eigen::Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }

  auto vec() { return Eigen::Map<Vector>(value.data(), value.size()); }
  auto vec() const { return Eigen::Map<const Vector>(value.data(), value.size()); }
  auto grad_vec() { return Eigen::Map<Vector>(grad.data(), grad.size()); }
};

using ParamList = std::vector<Param*>;

/// Fills with U(-scale, scale).
inline void init_uniform(Param& p, double scale, Rng& rng) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = dist(rng);
}

inline std::size_t count_parameters(const ParamList& params) {
  std::size_t n = 0;
  for (const Param* p : params) n += std::size_t(p->size());
  return n;
}

inline void zero_grads(const ParamList& params) {
  for (Param* p : params) p->zero_grad();
}

struct AdamOptions {
  double learning_rate = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam without weight decay. Only parameters flagged trainable at step time
/// are updated; frozen ones are never written.
class Adam {
 public:
  Adam(ParamList params, AdamOptions options) : params_(std::move(params)), options_(options) {
    for (const Param* p : params_) {
      first_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      second_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step() {
    ++steps_;
    const double c1 = 1.0 - std::pow(options_.beta1, double(steps_));
    const double c2 = 1.0 - std::pow(options_.beta2, double(steps_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Param& p = *params_[i];
      if (!p.trainable) continue;
      first_[i] = options_.beta1 * first_[i] + (1.0 - options_.beta1) * p.grad;
      second_[i] = options_.beta2 * second_[i] + (1.0 - options_.beta2) * p.grad.cwiseProduct(p.grad);
      p.value.array() -= options_.learning_rate * (first_[i].array() / c1) /
                         ((second_[i].array() / c2).sqrt() + options_.epsilon);
    }
  }

  std::size_t steps() const { return steps_; }

 private:
  ParamList params_;
  AdamOptions options_;
  std::vector<Matrix> first_;
  std::vector<Matrix> second_;
  std::size_t steps_ = 0;
};

}  // namespace vfevent
