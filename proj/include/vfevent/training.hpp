#pragma once

#include "vfevent/core.hpp"
#include "vfevent/data.hpp"
#include "vfevent/gradcheck.hpp"
#include "vfevent/imaginator.hpp"
#include "vfevent/model.hpp"
#include "vfevent/serialization.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace vfevent {

enum class TrainMode {
  kStaged,  // customise the imaginator, then fine-tune encoders + head
  kJoint,   // minimise L_class + beta * L_visual at every step
};

inline std::string to_string(TrainMode m) { return m == TrainMode::kStaged ? "staged" : "joint"; }

inline TrainMode parse_train_mode(const std::string& s) {
  if (s == "staged") return TrainMode::kStaged;
  if (s == "joint") return TrainMode::kJoint;
  throw Error(ErrorKind::kConfig, "unknown training mode '" + s + "'");
}

struct TrainConfig {
  double learning_rate = 2e-5;
  int batch_size = 4;
  int epochs = 50;
  double beta = 0.01;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::kStaged;
  std::size_t k_shots = 5;
  std::size_t n_ways = 8;
  FreezePolicy freeze_policy = FreezePolicy::kConditioningOnly;
  Modality modality = Modality::kBoth;
  int checkpoint_every = 0;  // epochs between checkpoint hook calls; 0 = never

  void validate() const {
    if (!(learning_rate > 0.0)) throw Error(ErrorKind::kConfig, "learning_rate must be > 0");
    if (batch_size < 1) throw Error(ErrorKind::kConfig, "batch_size must be >= 1");
    if (epochs < 0) throw Error(ErrorKind::kConfig, "epochs must be >= 0");
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw Error(ErrorKind::kConfig, "beta must be finite and >= 0");
    if (checkpoint_every < 0) throw Error(ErrorKind::kConfig, "checkpoint_every must be >= 0");
  }
};

inline Json to_json(const TrainConfig& c) {
  return Json{{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
              {"epochs", c.epochs},               {"beta", c.beta},
              {"seed", c.seed},                   {"mode", to_string(c.mode)},
              {"k_shots", c.k_shots},             {"n_ways", c.n_ways},
              {"freeze_policy", to_string(c.freeze_policy)},
              {"modality", to_string(c.modality)}, {"checkpoint_every", c.checkpoint_every}};
}

inline TrainConfig train_config_from_json(const Json& j, TrainConfig c = {}) {
  read_optional(j, "learning_rate", c.learning_rate);
  read_optional(j, "batch_size", c.batch_size);
  read_optional(j, "epochs", c.epochs);
  read_optional(j, "beta", c.beta);
  read_optional(j, "seed", c.seed);
  std::string mode = to_string(c.mode);
  read_optional(j, "mode", mode);
  c.mode = parse_train_mode(mode);
  read_optional(j, "k_shots", c.k_shots);
  read_optional(j, "n_ways", c.n_ways);
  std::string freeze = to_string(c.freeze_policy);
  read_optional(j, "freeze_policy", freeze);
  c.freeze_policy = parse_freeze_policy(freeze);
  std::string modality = to_string(c.modality);
  read_optional(j, "modality", modality);
  c.modality = parse_modality(modality);
  read_optional(j, "checkpoint_every", c.checkpoint_every);
  return c;
}

struct TrainRecord {
  std::size_t step = 0;
  std::string stage;  // warmup | customize | finetune | joint
  double class_loss = 0.0;
  double visual_loss = 0.0;
  double combined_loss = 0.0;
};

struct TrainLog {
  std::vector<TrainRecord> records;
  std::string checkpoint;

  std::vector<double> class_losses(const std::string& stage) const {
    std::vector<double> out;
    for (const auto& r : records) {
      if (r.stage == stage) out.push_back(r.class_loss);
    }
    return out;
  }

  std::vector<double> visual_losses(const std::string& stage) const {
    std::vector<double> out;
    for (const auto& r : records) {
      if (r.stage == stage) out.push_back(r.visual_loss);
    }
    return out;
  }

  void write_csv(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
    out << "step,stage,class_loss,visual_loss,combined_loss\n";
    char line[256];
    for (const auto& r : records) {
      std::snprintf(line, sizeof line, "%zu,%s,%.17g,%.17g,%.17g\n", r.step, r.stage.c_str(), r.class_loss,
                    r.visual_loss, r.combined_loss);
      out << line;
    }
  }
};

/// A support instance with its decoded image (if any).
struct SupportItem {
  Instance instance;
  std::optional<ImageArray> image;
};

inline std::vector<SupportItem> load_support(const Episode& episode, int resolution) {
  std::vector<SupportItem> items;
  for (const auto& inst : episode.support) {
    items.push_back({inst, instance_image(inst, episode.image_root, resolution)});
  }
  return items;
}

struct TrainResult {
  ModelState model;
  TrainLog log;
};

using CheckpointHook = std::function<void(ModelState&, int epoch)>;
using RecordHook = std::function<void(const TrainRecord&)>;

namespace detail {

inline std::vector<ImaginePair> imagine_pairs(const ModelState& model, const std::vector<SupportItem>& support) {
  std::vector<ImaginePair> pairs;
  for (const auto& item : support) {
    if (item.image) pairs.push_back({model.tokenizer.encode(item.instance.text), *item.image});
  }
  return pairs;
}

}  // namespace detail

/// Few-shot training on an episode's support set.
///
/// Staged mode warms up the imaginator (when configured), customises it under
/// the freeze policy, then fine-tunes encoders and head on L_class. Joint mode
/// runs the same warm-up and then minimises L_class + beta * L_visual per
/// batch; the visual term only reaches imaginator parameters. The imaginator
/// is skipped entirely for single-modality ablation models. With epochs == 0
/// the initial model is returned unchanged.
inline TrainResult train(const Episode& episode, const ModelConfig& model_config, const TrainConfig& config,
                         const ModelState* initial = nullptr, const CheckpointHook& on_checkpoint = {},
                         const RecordHook& on_record = {}) {
  config.validate();
  model_config.validate();
  const std::vector<SupportItem> support = load_support(episode, model_config.resolution);
  if (support.empty()) throw Error(ErrorKind::kTraining, "episode has an empty support set");
  if (config.modality != Modality::kTextOnly) {
    for (const auto& item : support) {
      if (!item.image && !item.instance.is_none()) {
        throw Error(ErrorKind::kValidation, "support instance '" + item.instance.id + "' has no image");
      }
    }
  }

  TrainResult result;
  if (initial) {
    result.model = *initial;
    if (result.model.labels != episode.labels()) {
      throw Error(ErrorKind::kConfig, "initial model's labels do not match the episode's");
    }
  } else {
    std::vector<std::string> texts;
    for (const auto& item : support) texts.push_back(item.instance.text);
    result.model = init_model(model_config, episode.event_types, texts, derive_seed(config.seed, "init"));
  }
  ModelState& model = result.model;
  model.pool.clear();
  for (const auto& item : support) {
    if (item.image) model.pool.push_back({item.instance.id, item.instance.text, *item.image});
  }
  model.imaginator.apply_freeze_policy(config.freeze_policy);
  if (config.epochs == 0) return result;

  TrainLog& log = result.log;
  std::size_t step = 0;
  auto record = [&](const std::string& stage, double cls, double vis) {
    const double combined = cls + config.beta * vis;
    if (!std::isfinite(cls) || !std::isfinite(vis) || !std::isfinite(combined)) {
      if (on_record) on_record({step, stage, cls, vis, combined});
      throw Error(ErrorKind::kTraining, "non-finite loss at step " + std::to_string(step) + " (" + stage + ")");
    }
    log.records.push_back({step++, stage, cls, vis, combined});
    if (on_record) on_record(log.records.back());
  };

  // Numerical failures inside a stage surface as training errors naming the
  // global step that was being computed.
  auto at_step = [&](const std::string& stage, auto&& fn) {
    try {
      return fn();
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNumerical) throw;
      throw Error(ErrorKind::kTraining,
                  "diverged at step " + std::to_string(step) + " (" + stage + "): " + e.what());
    }
  };

  const bool with_imaginator = config.modality == Modality::kBoth;
  const std::vector<ImaginePair> pairs = detail::imagine_pairs(model, support);
  const ImaginatorConfig& icfg = model.imaginator.config;
  if (with_imaginator && icfg.pretrain_steps > 0) {
    std::vector<ImageArray> images;
    for (const auto& p : pairs) images.push_back(p.image);
    model.imaginator = at_step("warmup", [&] {
      return pretrain(model.imaginator, images, icfg.pretrain_steps, icfg.pretrain_learning_rate, icfg.batch_size,
                      derive_seed(config.seed, "warmup"), [&](int, double loss) { record("warmup", 0.0, loss); });
    });
  }
  if (with_imaginator && config.mode == TrainMode::kStaged && icfg.customize_steps > 0) {
    CustomizeOptions options;
    options.steps = icfg.customize_steps;
    options.learning_rate = icfg.learning_rate;
    options.batch_size = icfg.batch_size;
    options.seed = derive_seed(config.seed, "customize");
    options.freeze = config.freeze_policy;
    options.target = icfg.target;
    model.imaginator = at_step("customize", [&] {
      return customize(model.imaginator, pairs, options, [&](int, double loss) { record("customize", 0.0, loss); });
    });
  }

  // Classifier fine-tuning (and the joint objective).
  const bool joint = config.mode == TrainMode::kJoint && with_imaginator;
  std::vector<Vector> targets;
  std::vector<int> pair_of_support(support.size(), -1);
  if (joint) {
    targets = customization_targets(model.imaginator, pairs, icfg.target, derive_seed(config.seed, "customize.targets"));
    int k = 0;
    for (std::size_t i = 0; i < support.size(); ++i) {
      if (support[i].image) pair_of_support[i] = k++;
    }
  }
  std::vector<std::size_t> labels(support.size());
  for (std::size_t i = 0; i < support.size(); ++i) labels[i] = model.label_of(support[i].instance.label);

  Adam classifier_opt(model.classifier_params(), {.learning_rate = config.learning_rate});
  Adam imaginator_opt(model.imaginator.params(), {.learning_rate = icfg.learning_rate});
  Rng dropout_rng(derive_seed(config.seed, "dropout"));
  Rng noise_rng(derive_seed(config.seed, "joint.noise"));
  const double dropout = model.uses_adapter() ? 0.0 : model_config.encoder.dropout_rate;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(support.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(config.seed, "epoch." + std::to_string(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    for (std::size_t start = 0; start < order.size(); start += std::size_t(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + std::size_t(config.batch_size));
      std::vector<ClassExample> batch;
      for (std::size_t b = start; b < end; ++b) {
        const auto& item = support[order[b]];
        ClassExample ex;
        ex.text = item.instance.text;
        ex.image = item.image ? &*item.image : nullptr;
        ex.label = labels[order[b]];
        if (dropout > 0.0) ex.dropout = dropout_scale(model.text_dim(), dropout, dropout_rng);
        batch.push_back(std::move(ex));
      }
      zero_grads(model.params());
      const std::string stage = joint ? "joint" : "finetune";
      const double cls = at_step(stage, [&] { return class_loss_backward(model, batch, config.modality, 1.0); });

      double vis = 0.0;
      if (joint) {
        std::vector<VisualExample> visual;
        for (std::size_t b = start; b < end; ++b) {
          const int k = pair_of_support[order[b]];
          if (k < 0) continue;
          VisualExample ex{pairs[std::size_t(k)].ids, model.imaginator.encode(pairs[std::size_t(k)].image),
                           targets[std::size_t(k)], sample_timestep(model.imaginator.schedule, noise_rng), {}};
          ex.eps = standard_normal(ex.clean.size(), noise_rng);
          visual.push_back(std::move(ex));
        }
        for (const auto& ex : visual) {
          vis += at_step(stage, [&] { return visual_loss_backward(model.imaginator, ex, config.beta / double(visual.size())); });
        }
        if (!visual.empty()) vis /= double(visual.size());
      }
      record(stage, cls, vis);
      classifier_opt.step();
      if (joint) imaginator_opt.step();
    }
    if (on_checkpoint && config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0) {
      on_checkpoint(model, epoch + 1);
    }
  }
  return result;
}

enum class LossKind { kClass, kVisual, kCombined };

/// Fixed inputs for a finite-difference check: dropout masks, timesteps and
/// noise are all drawn up front.
struct CheckBatch {
  std::vector<ClassExample> class_items;
  std::vector<VisualExample> visual_items;
};

/// Max relative error between analytic and central-difference gradients of
/// the chosen loss over every trainable parameter of `model`.
inline GradientCheckResult gradient_check(ModelState& model, const CheckBatch& batch, double epsilon, LossKind kind,
                                          double beta = 0.01) {
  const bool use_class = kind != LossKind::kVisual;
  const bool use_visual = kind != LossKind::kClass;
  if (use_class && batch.class_items.empty()) throw Error(ErrorKind::kInput, "gradient check needs class items");
  if (use_visual && batch.visual_items.empty()) throw Error(ErrorKind::kInput, "gradient check needs visual items");
  const double visual_weight = kind == LossKind::kCombined ? beta : 1.0;

  auto loss = [&]() {
    double total = 0.0;
    if (use_class) total += class_loss(model, batch.class_items);
    if (use_visual) {
      double v = 0.0;
      for (const auto& ex : batch.visual_items) v += visual_loss(model.imaginator, ex);
      total += visual_weight * v / double(batch.visual_items.size());
    }
    return total;
  };
  auto grads = [&]() {
    if (use_class) class_loss_backward(model, batch.class_items, Modality::kBoth, 1.0);
    if (use_visual) {
      for (const auto& ex : batch.visual_items) {
        visual_loss_backward(model.imaginator, ex, visual_weight / double(batch.visual_items.size()));
      }
    }
  };
  return check_gradients(model.params(), loss, grads, epsilon);
}

}  // namespace vfevent
