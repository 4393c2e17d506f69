#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace vfevent {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

/// Label reserved for sentences that report no event. Always the last class index.
inline constexpr std::string_view kNoneLabel = "none";

enum class ErrorKind {
  kInput,       // bad argument to an operation
  kParse,       // malformed manifest / config text
  kSchema,      // well-formed but wrong field types
  kValidation,  // dataset or config invariant violated
  kDecode,      // unreadable image
  kSampling,    // not enough instances for an episode
  kConfig,      // invalid configuration or mode prerequisites
  kNumerical,   // non-finite values
  kTraining,    // divergence during optimisation
  kIo,          // filesystem failures
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInput: return "input error";
    case ErrorKind::kParse: return "parse error";
    case ErrorKind::kSchema: return "schema error";
    case ErrorKind::kValidation: return "validation error";
    case ErrorKind::kDecode: return "decode error";
    case ErrorKind::kSampling: return "sampling error";
    case ErrorKind::kConfig: return "configuration error";
    case ErrorKind::kNumerical: return "numerical error";
    case ErrorKind::kTraining: return "training error";
    case ErrorKind::kIo: return "io error";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  /// True for failures caused by the caller's data or configuration rather than by
  /// the numerics of the model.
  bool is_user_error() const noexcept {
    return kind_ != ErrorKind::kNumerical && kind_ != ErrorKind::kTraining;
  }

 private:
  ErrorKind kind_;
};

// Seed plumbing. Every random stream in the library is derived from one global
// seed plus a tag, so independent components never share a generator.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
  return splitmix64(base ^ splitmix64(fnv1a(tag)));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return splitmix64(base ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& values) {
  return values.derived().array().isFinite().all();
}

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& values, std::string_view what) {
  if (!all_finite(values)) {
    throw Error(ErrorKind::kNumerical, "non-finite values in " + std::string(what));
  }
}

inline void require_finite(double value, std::string_view what) {
  if (!std::isfinite(value)) {
    throw Error(ErrorKind::kNumerical, "non-finite value in " + std::string(what));
  }
}

inline Vector standard_normal(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = normal(rng);
  return out;
}

}  // namespace vfevent
