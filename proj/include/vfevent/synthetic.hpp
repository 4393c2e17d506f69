#pragma once

#include "vfevent/core.hpp"
#include "vfevent/data.hpp"
#include "vfevent/image.hpp"
#include "vfevent/serialization.hpp"

#include <array>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace vfevent {

/// Colour-coded toy corpora. Every image is a flat prototype colour (one
/// dominant RGB channel) plus uniform per-pixel noise; every sentence is a
/// keyword placed among filler words.
struct ToyClass {
  std::string label;
  std::array<double, 3> colour;  // prototype in [-1, 1]
  std::vector<std::string> keywords;
  std::vector<double> keyword_weights;  // sampling weights, same length as keywords
};

struct ToySpec {
  std::vector<ToyClass> classes;
  std::size_t per_class = 60;
  int resolution = 8;
  double pixel_noise = 0.3;
  std::size_t filler_words = 3;
};

inline const std::vector<std::string>& toy_fillers() {
  static const std::vector<std::string> words{"the",   "report", "said",  "near", "city",   "people", "today",
                                              "local", "during", "after", "many", "across", "region", "news"};
  return words;
}

inline constexpr std::array<double, 3> kRed{0.8, -0.6, -0.6};
inline constexpr std::array<double, 3> kGreen{-0.6, 0.8, -0.6};
inline constexpr std::array<double, 3> kBlue{-0.6, -0.6, 0.8};

/// Two event types whose keyword names the class; colour follows the class.
inline ToySpec colour_pair_spec() {
  ToySpec spec;
  spec.classes = {{"attack", kRed, {"attack"}, {1.0}},
                  {"transport", kBlue, {"transport"}, {1.0}},
                  {std::string(kNoneLabel), kGreen, {"nothing"}, {1.0}}};
  return spec;
}

/// Four event types plus none. Each type's sentences carry its own keyword
/// 70% of the time and a keyword shared with a partner type otherwise
/// (attack/meet share "clash", transport/arrest share "move"). Colour groups
/// cut across the pairs: attack and transport are red, meet and arrest green,
/// none blue. Text alone resolves 70% of the ambiguity, colour alone splits
/// types into two halves, and the pair determines the label.
inline ToySpec fusion_spec() {
  ToySpec spec;
  spec.per_class = 60;
  spec.classes = {{"attack", kRed, {"attack", "clash"}, {0.7, 0.3}},
                  {"meet", kGreen, {"meet", "clash"}, {0.7, 0.3}},
                  {"transport", kRed, {"transport", "move"}, {0.7, 0.3}},
                  {"arrest", kGreen, {"arrest", "move"}, {0.7, 0.3}},
                  {std::string(kNoneLabel), kBlue, {"nothing"}, {1.0}}};
  return spec;
}

inline ImageArray toy_image(const std::array<double, 3>& colour, int resolution, double noise, Rng& rng) {
  ImageArray img = ImageArray::zeros(resolution);
  std::uniform_real_distribution<double> jitter(-noise, noise);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < resolution; ++y) {
      for (int x = 0; x < resolution; ++x) img.at(c, y, x) = std::clamp(colour[std::size_t(c)] + jitter(rng), -1.0, 1.0);
    }
  }
  return img;
}

/// Writes `manifest.jsonl` and `images/*.png` under `dir` and returns the
/// manifest path. Output is a pure function of (spec, seed).
inline std::filesystem::path write_toy_dataset(const ToySpec& spec, const std::filesystem::path& dir,
                                               std::uint64_t seed) {
  std::filesystem::create_directories(dir / "images");
  const auto manifest = dir / "manifest.jsonl";
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + manifest.string());
  Rng rng(derive_seed(seed, "toy.dataset"));
  const auto& fillers = toy_fillers();
  std::uniform_int_distribution<std::size_t> filler(0, fillers.size() - 1);
  for (const auto& cls : spec.classes) {
    std::discrete_distribution<std::size_t> keyword(cls.keyword_weights.begin(), cls.keyword_weights.end());
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      std::vector<std::string> words;
      for (std::size_t w = 0; w < spec.filler_words; ++w) words.push_back(fillers[filler(rng)]);
      std::uniform_int_distribution<std::size_t> slot(0, words.size());
      words.insert(words.begin() + std::ptrdiff_t(slot(rng)), cls.keywords[keyword(rng)]);
      std::string text;
      for (const auto& w : words) text += (text.empty() ? "" : " ") + w;

      char id[64];
      std::snprintf(id, sizeof id, "%s-%03zu", cls.label.c_str(), i);
      const std::string image_ref = std::string("images/") + id + ".png";
      save_png(toy_image(cls.colour, spec.resolution, spec.pixel_noise, rng), dir / image_ref);
      out << Json{{"id", id}, {"text", text}, {"image", image_ref}, {"event_type", cls.label}}.dump() << '\n';
    }
  }
  return manifest;
}

}  // namespace vfevent
