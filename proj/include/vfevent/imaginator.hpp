#pragma once

#include "vfevent/core.hpp"
#include "vfevent/encoders.hpp"
#include "vfevent/image.hpp"
#include "vfevent/params.hpp"
#include "vfevent/schedule.hpp"

#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace vfevent {

/// What the reconstruction loss compares the denoiser's prediction against.
enum class TargetPolicy {
  kGroundTruth,  // the paired support image
  kSynthesized,  // an image pre-generated by the uncustomised imaginator from the same text
};

enum class FreezePolicy {
  kConditioningOnly,         // only the conditioning text encoder trains
  kAllTrainable,
};

inline std::string to_string(TargetPolicy p) { return p == TargetPolicy::kGroundTruth ? "ground_truth" : "synthesized"; }
inline std::string to_string(FreezePolicy p) { return p == FreezePolicy::kConditioningOnly ? "paper" : "all_trainable"; }

inline TargetPolicy parse_target_policy(const std::string& s) {
  if (s == "ground_truth") return TargetPolicy::kGroundTruth;
  if (s == "synthesized") return TargetPolicy::kSynthesized;
  throw Error(ErrorKind::kConfig, "unknown target policy '" + s + "'");
}

inline FreezePolicy parse_freeze_policy(const std::string& s) {
  if (s == "paper") return FreezePolicy::kConditioningOnly;
  if (s == "all_trainable") return FreezePolicy::kAllTrainable;
  throw Error(ErrorKind::kConfig, "unknown freeze policy '" + s + "'");
}

struct ImaginatorConfig {
  int timesteps = 1000;
  ScheduleKind schedule = ScheduleKind::kCosine;
  double omega = 1.0;
  TargetPolicy target = TargetPolicy::kGroundTruth;
  int token_dim = 64;
  int cond_dim = 64;
  int hidden_dim = 256;
  int time_dim = 16;
  int sample_steps = 50;
  // Unconditional warm-up of the denoiser on support images; stands in for
  // pretrained diffusion weights when none are available.
  int pretrain_steps = 0;
  double pretrain_learning_rate = 1e-3;
  int customize_steps = 200;
  double learning_rate = 2e-5;
  int batch_size = 4;

  void validate() const {
    if (timesteps < 1) throw Error(ErrorKind::kConfig, "imaginator.timesteps must be >= 1");
    if (!(omega >= 0.0) || !std::isfinite(omega)) throw Error(ErrorKind::kConfig, "imaginator.omega must be finite and >= 0");
    if (token_dim <= 0 || cond_dim <= 0 || hidden_dim <= 0 || time_dim <= 0 || time_dim % 2 != 0) {
      throw Error(ErrorKind::kConfig, "imaginator dimensions must be positive (time_dim even)");
    }
    if (sample_steps < 1) throw Error(ErrorKind::kConfig, "imaginator.sample_steps must be >= 1");
    if (pretrain_steps < 0 || customize_steps < 0) throw Error(ErrorKind::kConfig, "step counts must be >= 0");
    if (!(learning_rate > 0.0) || !(pretrain_learning_rate > 0.0)) {
      throw Error(ErrorKind::kConfig, "imaginator learning rates must be > 0");
    }
    if (batch_size < 1) throw Error(ErrorKind::kConfig, "imaginator.batch_size must be >= 1");
  }
};

/// Maps images to the space the diffusion model runs in and back.
class LatentCodec {
 public:
  virtual ~LatentCodec() = default;
  virtual std::string name() const = 0;
  virtual Eigen::Index latent_size(int resolution) const = 0;
  virtual Vector encode(const ImageArray& image) const = 0;
  virtual ImageArray decode(const Vector& latent, int resolution) const = 0;
};

/// Pixel-space diffusion.
class IdentityCodec final : public LatentCodec {
 public:
  std::string name() const override { return "identity"; }
  Eigen::Index latent_size(int resolution) const override { return 3 * Eigen::Index(resolution) * resolution; }
  Vector encode(const ImageArray& image) const override { return image.pixels; }
  ImageArray decode(const Vector& latent, int resolution) const override {
    return ImageArray::from_pixels(resolution, latent.cwiseMax(-1.0).cwiseMin(1.0));
  }
};

/// Sinusoidal features of the integer timestep.
inline Vector timestep_embedding(int t, int dim) {
  Vector out(dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
    out[i] = std::sin(t * freq);
    out[half + i] = std::cos(t * freq);
  }
  return out;
}

/// One-hidden-layer perceptron over [x_t ; time features ; conditioning]
/// predicting the clean latent x_0.
class Denoiser {
 public:
  Param w1, b1, w2, b2;

  struct Cache {
    Vector input;
    Vector hidden;
  };

  Denoiser() = default;
  Denoiser(Eigen::Index latent, int time_dim, int cond_dim, int hidden)
      : w1("imaginator.denoiser.w1", hidden, latent + time_dim + cond_dim),
        b1("imaginator.denoiser.b1", hidden, 1),
        w2("imaginator.denoiser.w2", latent, hidden),
        b2("imaginator.denoiser.b2", latent, 1),
        latent_(latent),
        time_dim_(time_dim),
        cond_dim_(cond_dim) {}

  void init(Rng& rng) {
    const double s1 = 1.0 / std::sqrt(double(w1.value.cols()));
    const double s2 = 1.0 / std::sqrt(double(w2.value.cols()));
    init_uniform(w1, s1, rng);
    init_uniform(b1, s1, rng);
    init_uniform(w2, s2, rng);
    init_uniform(b2, s2, rng);
  }

  ParamList params() { return {&w1, &b1, &w2, &b2}; }
  Eigen::Index latent_size() const { return latent_; }
  int cond_dim() const { return cond_dim_; }

  Vector forward(const Vector& x_t, int t, const Vector& cond, Cache* cache = nullptr) const {
    Vector input(latent_ + time_dim_ + cond_dim_);
    input << x_t, timestep_embedding(t, time_dim_), cond;
    Vector hidden = (w1.value * input + b1.value.col(0)).array().tanh().matrix();
    Vector out = w2.value * hidden + b2.value.col(0);
    if (cache) {
      cache->input = std::move(input);
      cache->hidden = std::move(hidden);
    }
    return out;
  }

  /// Accumulates parameter gradients (trainable ones only) and returns the
  /// gradient with respect to the conditioning input.
  Vector backward(const Cache& cache, const Vector& grad_out) {
    if (w2.trainable) w2.grad.noalias() += grad_out * cache.hidden.transpose();
    if (b2.trainable) b2.grad.col(0) += grad_out;
    const Vector d_hidden = w2.value.transpose() * grad_out;
    const Vector d_pre = d_hidden.cwiseProduct((1.0 - cache.hidden.array().square()).matrix());
    if (w1.trainable) w1.grad.noalias() += d_pre * cache.input.transpose();
    if (b1.trainable) b1.grad.col(0) += d_pre;
    return w1.value.rightCols(cond_dim_).transpose() * d_pre;
  }

 private:
  Eigen::Index latent_ = 0;
  int time_dim_ = 0;
  int cond_dim_ = 0;
};

/// Text-conditioned denoising diffusion model with its own conditioning encoder.
class Imaginator {
 public:
  ImaginatorConfig config;
  NoiseSchedule schedule;
  TextEncoder cond;
  Denoiser denoiser;
  std::shared_ptr<const LatentCodec> codec = std::make_shared<IdentityCodec>();
  int resolution = 0;

  Imaginator() = default;
  Imaginator(const ImaginatorConfig& cfg, int res, std::size_t table_rows,
             std::shared_ptr<const LatentCodec> latent_codec = std::make_shared<IdentityCodec>())
      : config(cfg),
        schedule(make_schedule(cfg.timesteps, cfg.schedule)),
        cond("imaginator.cond", table_rows, cfg.token_dim, cfg.cond_dim),
        denoiser(latent_codec->latent_size(res), cfg.time_dim, cfg.cond_dim, cfg.hidden_dim),
        codec(std::move(latent_codec)),
        resolution(res) {
    cfg.validate();
  }

  /// The conditioning projection starts at zero so the untouched model behaves
  /// exactly like its unconditional warm-up.
  void init(Rng& rng) {
    cond.init(rng);
    cond.weight.value.setZero();
    cond.bias.value.setZero();
    denoiser.init(rng);
  }

  ParamList params() {
    ParamList all = cond.params();
    for (Param* p : denoiser.params()) all.push_back(p);
    return all;
  }
  ParamList cond_params() { return cond.params(); }
  ParamList denoiser_params() { return denoiser.params(); }

  void apply_freeze_policy(FreezePolicy policy) {
    for (Param* p : cond_params()) p->trainable = true;
    for (Param* p : denoiser_params()) p->trainable = policy == FreezePolicy::kAllTrainable;
  }

  void set_all_trainable(bool trainable) {
    for (Param* p : params()) p->trainable = trainable;
  }

  std::vector<bool> trainable_mask() {
    std::vector<bool> mask;
    for (Param* p : params()) mask.push_back(p->trainable);
    return mask;
  }

  Vector condition(std::span<const int> ids) const { return cond.forward(ids); }

  /// Denoiser's clean-latent estimate for a noised latent.
  Vector reconstruct(const Vector& x_t, int t, const Vector& c) const { return denoiser.forward(x_t, t, c); }

  Vector encode(const ImageArray& image) const {
    if (image.height != resolution || image.width != resolution) {
      throw Error(ErrorKind::kInput, "image resolution does not match the imaginator's working resolution");
    }
    return codec->encode(image);
  }
};

/// One reconstruction-loss term: text, clean latent, target latent, and the
/// drawn timestep and noise. An empty `ids` means unconditional.
struct VisualExample {
  std::vector<int> ids;
  Vector clean;
  Vector target;
  int t = 1;
  Vector eps;
};

namespace detail {

inline void check_visual_example(const Imaginator& model, const VisualExample& ex) {
  const Eigen::Index n = model.denoiser.latent_size();
  if (ex.clean.size() != n || ex.target.size() != n || ex.eps.size() != n) {
    throw Error(ErrorKind::kInput, "visual example shapes do not match the latent size " + std::to_string(n));
  }
}

inline Vector conditioning(const Imaginator& model, const VisualExample& ex) {
  return ex.ids.empty() ? Vector::Zero(model.config.cond_dim) : model.condition(ex.ids);
}

}  // namespace detail

/// omega * || F(alpha_t v + sigma_t eps, s) - target ||^2 for a single example.
inline double visual_loss(const Imaginator& model, const VisualExample& ex) {
  detail::check_visual_example(model, ex);
  const Vector x_t = noising(ex.clean, ex.t, ex.eps, model.schedule);
  const Vector diff = model.reconstruct(x_t, ex.t, detail::conditioning(model, ex)) - ex.target;
  const double loss = model.config.omega * diff.squaredNorm();
  require_finite(loss, "visual loss (t=" + std::to_string(ex.t) + ")");
  return loss;
}

/// Same loss, accumulating `scale` times its gradient into the trainable parameters.
inline double visual_loss_backward(Imaginator& model, const VisualExample& ex, double scale) {
  detail::check_visual_example(model, ex);
  const Vector x_t = noising(ex.clean, ex.t, ex.eps, model.schedule);
  const Vector c = detail::conditioning(model, ex);
  Denoiser::Cache cache;
  const Vector diff = model.denoiser.forward(x_t, ex.t, c, &cache) - ex.target;
  const double loss = model.config.omega * diff.squaredNorm();
  require_finite(loss, "visual loss (t=" + std::to_string(ex.t) + ")");
  if (scale == 0.0) return loss;
  const Vector grad_out = (2.0 * model.config.omega * scale) * diff;
  const Vector grad_c = model.denoiser.backward(cache, grad_out);
  if (!ex.ids.empty()) model.cond.backward(ex.ids, Vector(), grad_c);
  return loss;
}

inline int sample_timestep(const NoiseSchedule& schedule, Rng& rng) {
  std::uniform_int_distribution<int> dist(1, schedule.num_steps);
  return dist(rng);
}

/// Deterministic sampler: seeded Gaussian start, then `num_steps` DDIM updates
/// from t=T down to t=0.
inline ImageArray synthesize(const Imaginator& model, std::span<const int> ids, int num_steps, std::uint64_t seed) {
  if (num_steps < 1) throw Error(ErrorKind::kInput, "num_sample_steps must be >= 1");
  const int T = model.schedule.num_steps;
  num_steps = std::min(num_steps, T);
  const Vector c = model.condition(ids);
  Rng rng(seed);
  Vector x = standard_normal(model.denoiser.latent_size(), rng);

  std::vector<int> times(std::size_t(num_steps) + 1);
  for (int i = 0; i <= num_steps; ++i) {
    times[std::size_t(i)] = int(std::lround(double(T) * i / num_steps));
  }
  for (int i = num_steps; i >= 1; --i) {
    const int t = times[std::size_t(i)];
    const int t_prev = times[std::size_t(i - 1)];
    const Vector x0 = model.reconstruct(x, t, c).cwiseMax(-1.0).cwiseMin(1.0);
    const Vector eps_hat = (x - model.schedule.alpha(t) * x0) / model.schedule.sigma(t);
    x = model.schedule.alpha(t_prev) * x0 + model.schedule.sigma(t_prev) * eps_hat;
    require_finite(x, "sampler state at t=" + std::to_string(t_prev));
  }
  return model.codec->decode(x, model.resolution);
}

/// A (text, image) pair as seen by the imaginator.
struct ImaginePair {
  std::vector<int> ids;
  ImageArray image;
};

struct CustomizeOptions {
  int steps = 200;
  double learning_rate = 2e-5;
  int batch_size = 4;
  std::uint64_t seed = 0;
  FreezePolicy freeze = FreezePolicy::kConditioningOnly;
  TargetPolicy target = TargetPolicy::kGroundTruth;
};

using StepCallback = std::function<void(int step, double loss)>;

/// Targets for the reconstruction loss under `policy`.
inline std::vector<Vector> customization_targets(const Imaginator& model, std::span<const ImaginePair> pairs,
                                                 TargetPolicy policy, std::uint64_t seed) {
  std::vector<Vector> targets;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (policy == TargetPolicy::kGroundTruth) {
      targets.push_back(model.encode(pairs[i].image));
    } else {
      const ImageArray pre = synthesize(model, pairs[i].ids, model.config.sample_steps,
                                        derive_seed(seed, "customize.target." + std::to_string(i)));
      targets.push_back(model.encode(pre));
    }
  }
  return targets;
}

/// Mean reconstruction loss over `pairs` with `draws` fixed (t, eps) samples each.
inline double mean_visual_loss(const Imaginator& model, std::span<const ImaginePair> pairs,
                               std::span<const Vector> targets, int draws, std::uint64_t seed) {
  if (pairs.empty()) throw Error(ErrorKind::kInput, "no pairs to evaluate");
  Rng rng(seed);
  double total = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    for (int d = 0; d < draws; ++d) {
      VisualExample ex;
      ex.ids = pairs[i].ids;
      ex.clean = model.encode(pairs[i].image);
      ex.target = targets[i];
      ex.t = sample_timestep(model.schedule, rng);
      ex.eps = standard_normal(ex.clean.size(), rng);
      total += visual_loss(model, ex);
    }
  }
  return total / double(pairs.size() * std::size_t(draws));
}

namespace detail {

// Minibatch indices cycling through a reshuffled permutation.
class BatchCycler {
 public:
  BatchCycler(std::size_t n, Rng& rng) : order_(n), rng_(rng) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    for (std::size_t b = 0; b < batch; ++b) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  Rng& rng_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Unconditional denoising warm-up with every denoiser parameter trainable.
/// Returns the warmed-up copy; the trainable mask of the input is preserved.
inline Imaginator pretrain(const Imaginator& start, std::span<const ImageArray> images, int steps,
                           double learning_rate, int batch_size, std::uint64_t seed,
                           const StepCallback& on_step = {}) {
  Imaginator model = start;
  if (steps == 0) return model;
  if (images.empty()) throw Error(ErrorKind::kTraining, "imaginator warm-up needs at least one image");
  const auto mask = model.trainable_mask();
  model.set_all_trainable(true);
  std::vector<Vector> latents;
  for (const auto& img : images) latents.push_back(model.encode(img));

  Rng rng(seed);
  detail::BatchCycler cycler(latents.size(), rng);
  Adam adam(model.denoiser_params(), {.learning_rate = learning_rate});
  for (int step = 0; step < steps; ++step) {
    zero_grads(model.params());
    double loss = 0.0;
    const auto batch = cycler.next(std::size_t(batch_size));
    for (auto i : batch) {
      VisualExample ex{{}, latents[i], latents[i], sample_timestep(model.schedule, rng), {}};
      ex.eps = standard_normal(ex.clean.size(), rng);
      loss += visual_loss_backward(model, ex, 1.0 / double(batch.size()));
    }
    loss /= double(batch.size());
    if (!std::isfinite(loss)) {
      throw Error(ErrorKind::kTraining, "imaginator warm-up diverged at step " + std::to_string(step));
    }
    adam.step();
    if (on_step) on_step(step, loss);
  }
  const auto all = model.params();
  for (std::size_t i = 0; i < all.size(); ++i) all[i]->trainable = mask[i];
  return model;
}

/// Few-shot customisation: minimises the reconstruction loss over support
/// pairs, updating only parameters left trainable by the freeze policy.
inline Imaginator customize(const Imaginator& start, std::span<const ImaginePair> pairs,
                            const CustomizeOptions& options, const StepCallback& on_step = {}) {
  if (pairs.empty()) throw Error(ErrorKind::kTraining, "customisation needs support instances with images");
  if (options.batch_size < 1) throw Error(ErrorKind::kConfig, "batch_size must be >= 1");
  Imaginator model = start;
  model.apply_freeze_policy(options.freeze);
  if (options.steps == 0) return model;

  const std::vector<Vector> targets =
      customization_targets(start, pairs, options.target, derive_seed(options.seed, "targets"));
  std::vector<Vector> latents;
  for (const auto& p : pairs) latents.push_back(model.encode(p.image));

  Rng rng(derive_seed(options.seed, "customize"));
  detail::BatchCycler cycler(pairs.size(), rng);
  Adam adam(model.params(), {.learning_rate = options.learning_rate});
  for (int step = 0; step < options.steps; ++step) {
    zero_grads(model.params());
    const auto batch = cycler.next(std::size_t(options.batch_size));
    double loss = 0.0;
    for (auto i : batch) {
      VisualExample ex{pairs[i].ids, latents[i], targets[i], sample_timestep(model.schedule, rng), {}};
      ex.eps = standard_normal(ex.clean.size(), rng);
      loss += visual_loss_backward(model, ex, 1.0 / double(batch.size()));
    }
    loss /= double(batch.size());
    if (!std::isfinite(loss)) {
      throw Error(ErrorKind::kTraining, "customisation diverged at step " + std::to_string(step));
    }
    adam.step();
    if (on_step) on_step(step, loss);
  }
  return model;
}

}  // namespace vfevent
