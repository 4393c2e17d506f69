#pragma once

#include "vfevent/vfevent.hpp"

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace vfevent::testing {

namespace fs = std::filesystem;

/// Fresh scratch directory under the build tree's temp area.
inline fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "vfevent_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

inline void write_text(const fs::path& path, const std::string& contents) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  out << contents;
}

inline ImageArray flat_image(int resolution, double r, double g, double b) {
  ImageArray img = ImageArray::zeros(resolution);
  const double rgb[3] = {r, g, b};
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < resolution; ++y) {
      for (int x = 0; x < resolution; ++x) img.at(c, y, x) = rgb[c];
    }
  }
  return img;
}

/// Model small enough for exhaustive finite differences (about 2k parameters).
inline ModelConfig tiny_model_config() {
  ModelConfig mc;
  mc.resolution = 4;
  mc.encoder.text_dim = 4;
  mc.encoder.visual_dim = 4;
  mc.encoder.token_dim = 4;
  mc.encoder.hash_buckets = 2;
  mc.encoder.dropout_rate = 0.3;
  auto& ic = mc.imaginator;
  ic.timesteps = 50;
  ic.token_dim = 4;
  ic.cond_dim = 4;
  ic.hidden_dim = 16;
  ic.time_dim = 4;
  ic.sample_steps = 5;
  ic.customize_steps = 200;
  ic.learning_rate = 1e-2;
  return mc;
}

/// The desk-scale configuration used by the toy experiments.
inline ModelConfig toy_model_config() {
  ModelConfig mc;
  mc.resolution = 8;
  mc.encoder.text_dim = 16;
  mc.encoder.visual_dim = 16;
  mc.encoder.token_dim = 16;
  mc.encoder.hash_buckets = 8;
  mc.encoder.dropout_rate = 0.1;
  auto& ic = mc.imaginator;
  ic.token_dim = 16;
  ic.cond_dim = 64;
  ic.hidden_dim = 64;
  ic.time_dim = 8;
  ic.sample_steps = 20;
  ic.pretrain_steps = 1000;
  ic.pretrain_learning_rate = 3e-3;
  ic.customize_steps = 600;
  ic.learning_rate = 3e-2;
  return mc;
}

inline TrainConfig toy_train_config(std::size_t n_ways) {
  TrainConfig tc;
  tc.learning_rate = 1e-2;
  tc.n_ways = n_ways;
  return tc;
}

inline const std::vector<std::string>& tiny_texts() {
  static const std::vector<std::string> texts{"troops attack city", "leaders meet today", "nothing happened today",
                                              "attack near border"};
  return texts;
}

/// Moves every parameter off its initial value so no gradient is structurally zero.
inline void jitter_params(ModelState& model, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (Param* p : model.params()) {
    for (Eigen::Index i = 0; i < p->size(); ++i) p->value.data()[i] += u(rng);
  }
}

}  // namespace vfevent::testing
