#pragma once

#include "vfevent/core.hpp"

#include <numbers>
#include <string>
#include <vector>

namespace vfevent {

enum class ScheduleKind { kCosine, kLinear };

inline std::string to_string(ScheduleKind kind) {
  return kind == ScheduleKind::kCosine ? "cosine" : "linear";
}

inline ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "cosine") return ScheduleKind::kCosine;
  if (name == "linear") return ScheduleKind::kLinear;
  throw Error(ErrorKind::kConfig, "unknown schedule kind '" + name + "' (expected cosine or linear)");
}

/// Variance-preserving forward-process coefficients: x_t = alpha_t x_0 + sigma_t eps,
/// with alpha_t^2 + sigma_t^2 = 1, indexed t = 0..T.
struct NoiseSchedule {
  ScheduleKind kind = ScheduleKind::kCosine;
  int num_steps = 0;
  std::vector<double> alphas;
  std::vector<double> sigmas;

  double alpha(int t) const { return alphas.at(std::size_t(t)); }
  double sigma(int t) const { return sigmas.at(std::size_t(t)); }
};

inline NoiseSchedule make_schedule(int num_steps, ScheduleKind kind) {
  if (num_steps < 1) throw Error(ErrorKind::kInput, "schedule needs at least one step, got " + std::to_string(num_steps));
  constexpr double kMaxBeta = 0.999;
  const double T = num_steps;

  std::vector<double> betas(std::size_t(num_steps) + 1, 0.0);
  if (kind == ScheduleKind::kCosine) {
    constexpr double s = 0.008;
    auto f = [&](double t) {
      const double c = std::cos((t / T + s) / (1.0 + s) * std::numbers::pi / 2.0);
      return c * c;
    };
    for (int t = 1; t <= num_steps; ++t) {
      betas[std::size_t(t)] = std::min(1.0 - f(t) / f(t - 1), kMaxBeta);
    }
  } else {
    // Endpoints scaled so that T=1000 gives the usual 1e-4 .. 0.02 ramp.
    const double lo = 1e-4 * 1000.0 / T;
    const double hi = 0.02 * 1000.0 / T;
    for (int t = 1; t <= num_steps; ++t) {
      const double frac = num_steps == 1 ? 1.0 : double(t - 1) / double(num_steps - 1);
      betas[std::size_t(t)] = std::min(lo + frac * (hi - lo), kMaxBeta);
    }
  }

  NoiseSchedule schedule;
  schedule.kind = kind;
  schedule.num_steps = num_steps;
  schedule.alphas.resize(betas.size());
  schedule.sigmas.resize(betas.size());
  double alpha_bar = 1.0;
  for (std::size_t t = 0; t < betas.size(); ++t) {
    alpha_bar *= 1.0 - betas[t];
    schedule.alphas[t] = std::sqrt(alpha_bar);
    schedule.sigmas[t] = std::sqrt(1.0 - alpha_bar);
  }
  return schedule;
}

/// alpha_t * v + sigma_t * eps, elementwise.
inline Vector noising(const Vector& v, int t, const Vector& eps, const NoiseSchedule& schedule) {
  if (v.size() != eps.size()) {
    throw Error(ErrorKind::kInput, "noise has " + std::to_string(eps.size()) + " entries, signal has " +
                                       std::to_string(v.size()));
  }
  if (t < 0 || t > schedule.num_steps) {
    throw Error(ErrorKind::kInput, "timestep " + std::to_string(t) + " outside [0, " +
                                       std::to_string(schedule.num_steps) + "]");
  }
  return schedule.alpha(t) * v + schedule.sigma(t) * eps;
}

}  // namespace vfevent
