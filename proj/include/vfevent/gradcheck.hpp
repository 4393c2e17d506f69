#pragma once

#include "vfevent/core.hpp"
#include "vfevent/params.hpp"

#include <functional>
#include <string>

namespace vfevent {

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::string worst_param;
  Eigen::Index worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares accumulated analytic gradients against central differences
///   (f(x + h) - f(x - h)) / 2h
/// for every entry of every trainable parameter (or a seeded sample of at most
/// `max_entries_per_param` entries). Relative error is
///   |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
inline GradientCheckResult check_gradients(const ParamList& params, const std::function<double()>& loss,
                                           const std::function<void()>& accumulate_grads, double epsilon,
                                           std::size_t max_entries_per_param = 0, std::uint64_t seed = 0) {
  if (!(epsilon >= 1e-6 && epsilon <= 1e-4)) {
    throw Error(ErrorKind::kInput, "finite-difference step must lie in [1e-6, 1e-4], got " + std::to_string(epsilon));
  }
  zero_grads(params);
  accumulate_grads();
  for (const Param* p : params) {
    if (p->trainable) require_finite(p->grad, "gradient of " + p->name);
  }

  GradientCheckResult result;
  Rng rng(seed);
  for (Param* p : params) {
    if (!p->trainable) continue;
    std::vector<Eigen::Index> entries(std::size_t(p->size()));
    for (Eigen::Index i = 0; i < p->size(); ++i) entries[std::size_t(i)] = i;
    if (max_entries_per_param > 0 && entries.size() > max_entries_per_param) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(max_entries_per_param);
    }
    for (Eigen::Index i : entries) {
      double& x = p->value.data()[i];
      const double saved = x;
      x = saved + epsilon;
      const double up = loss();
      x = saved - epsilon;
      const double down = loss();
      x = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double analytic = p->grad.data()[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
      const double rel = std::abs(analytic - numeric) / denom;
      ++result.checked;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_param = p->name;
        result.worst_index = i;
        result.worst_analytic = analytic;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace vfevent
