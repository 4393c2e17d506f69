// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include "support.hpp"

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>

using namespace vfevent;
using namespace vfevent::testing;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int number, const std::string& title, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!o.pass) ++failures;
  std::printf("%s criterion %d (%s): %s [%.2fs]\n", o.pass ? "PASS" : "FAIL", number, title.c_str(),
              o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("'") + VFEVENT_CLI + "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

double support_loss(ModelState& model, const Episode& ep) {
  const auto support = load_support(ep, model.config.resolution);
  std::vector<ClassExample> batch;
  for (const auto& item : support) {
    batch.push_back({item.instance.text, item.image ? &*item.image : nullptr, model.label_of(item.instance.label), {}});
  }
  return class_loss(model, batch);
}

// ---------------------------------------------------------------------------

Outcome schedule_identities() {
  double worst = 0.0;
  bool endpoints = true;
  for (auto kind : {ScheduleKind::kCosine, ScheduleKind::kLinear}) {
    for (int T : {10, 1000}) {
      const NoiseSchedule s = make_schedule(T, kind);
      for (int t = 0; t <= T; ++t) worst = std::max(worst, std::abs(s.alpha(t) * s.alpha(t) + s.sigma(t) * s.sigma(t) - 1.0));
      endpoints = endpoints && s.alpha(0) == 1.0 && s.sigma(0) == 0.0;
    }
  }
  return {worst <= 1e-9 && endpoints, fmt("max |a^2+s^2-1| = %.2e, a_0 = 1 and s_0 = 0 exactly: %s", worst,
                                          endpoints ? "yes" : "no")};
}

Outcome noising_variance() {
  const NoiseSchedule s = make_schedule(1000, ScheduleKind::kCosine);
  Rng rng(derive_seed(0, "acceptance.noising"));
  constexpr int kDraws = 10000;
  double worst = 0.0;
  std::string detail;
  for (int t : {1, 250, 500, 750, 1000}) {
    const Vector v = standard_normal(kDraws, rng);
    const Vector eps = standard_normal(kDraws, rng);
    const Vector x = noising(v, t, eps, s);
    const double mean = x.mean();
    const double var = (x.array() - mean).square().sum() / double(kDraws - 1);
    worst = std::max(worst, std::abs(var - 1.0));
    detail += fmt("t=%d var=%.4f ", t, var);
  }
  return {worst <= 0.05, detail + fmt("(max deviation %.4f)", worst)};
}

Outcome gradient_oracle() {
  ModelState m = init_model(tiny_model_config(), {"attack", "meet"}, tiny_texts(), 1);
  m.imaginator.set_all_trainable(true);
  jitter_params(m, 2);
  const std::size_t n = count_parameters(m.params());
  Rng rng(3);
  const int res = m.config.resolution;
  const ImageArray a = flat_image(res, 0.6, -0.4, -0.2);
  const ImageArray b = flat_image(res, -0.3, 0.7, 0.1);
  CheckBatch batch;
  batch.class_items = {{tiny_texts()[0], &a, 0, dropout_scale(m.text_dim(), 0.3, rng)},
                       {tiny_texts()[1], &b, 1, dropout_scale(m.text_dim(), 0.3, rng)},
                       {tiny_texts()[2], nullptr, 2, dropout_scale(m.text_dim(), 0.3, rng)}};
  for (std::size_t i = 0; i < 2; ++i) {
    const ImageArray& img = i == 0 ? a : b;
    VisualExample ex{m.tokenizer.encode(tiny_texts()[i]), m.imaginator.encode(img), m.imaginator.encode(i == 0 ? b : a),
                     sample_timestep(m.imaginator.schedule, rng), {}};
    ex.eps = standard_normal(ex.clean.size(), rng);
    batch.visual_items.push_back(ex);
  }
  std::map<std::string, double> errors;
  errors["class"] = gradient_check(m, batch, 1e-5, LossKind::kClass).max_relative_error;
  errors["visual"] = gradient_check(m, batch, 1e-5, LossKind::kVisual).max_relative_error;
  for (double beta : {0.0, 0.01, 1.0}) {
    errors[fmt("combined(b=%g)", beta)] = gradient_check(m, batch, 1e-5, LossKind::kCombined, beta).max_relative_error;
  }
  double worst = 0.0;
  std::string detail = fmt("%zu params;", n);
  for (const auto& [name, err] : errors) {
    worst = std::max(worst, err);
    detail += fmt(" %s %.1e", name.c_str(), err);
  }
  return {n <= 5000 && worst <= 1e-4, detail};
}

const Dataset& pair_dataset() {
  static const Dataset ds = [] {
    return load_dataset(write_toy_dataset(colour_pair_spec(), scratch_dir("acceptance_pair"), 7));
  }();
  return ds;
}

Outcome freeze_policy() {
  const Episode ep = sample_episode(pair_dataset(), 2, 10, 1);
  ModelConfig mc = toy_model_config();
  std::vector<std::string> texts;
  for (const auto& inst : ep.support) texts.push_back(inst.text);
  ModelState m = init_model(mc, ep.event_types, texts, 3);
  const auto pairs = detail::imagine_pairs(m, load_support(ep, mc.resolution));
  std::vector<ImageArray> images;
  for (const auto& p : pairs) images.push_back(p.image);
  const Imaginator warm = pretrain(m.imaginator, images, 200, 3e-3, 4, 11);
  CustomizeOptions options;
  options.steps = 200;
  options.learning_rate = mc.imaginator.learning_rate;
  options.seed = 5;
  options.freeze = FreezePolicy::kConditioningOnly;
  Imaginator before = warm;
  before.apply_freeze_policy(FreezePolicy::kConditioningOnly);
  Imaginator after = customize(warm, pairs, options);
  const auto pb = before.params();
  const auto pa = after.params();
  std::size_t frozen = 0, frozen_changed = 0, cond_changed = 0;
  for (std::size_t i = 0; i < pb.size(); ++i) {
    const bool same =
        std::memcmp(pb[i]->value.data(), pa[i]->value.data(), sizeof(double) * std::size_t(pb[i]->size())) == 0;
    if (!pb[i]->trainable) {
      ++frozen;
      frozen_changed += same ? 0 : 1;
    } else if (!same && pb[i]->name.starts_with("imaginator.cond")) {
      ++cond_changed;
    }
  }
  return {frozen > 0 && frozen_changed == 0 && cond_changed > 0,
          fmt("%zu frozen tensors, %zu changed; %zu conditioning tensors changed", frozen, frozen_changed, cond_changed)};
}

Outcome loss_reduction() {
  const Episode ep = sample_episode(pair_dataset(), 2, 10, 1);
  ModelConfig mc = toy_model_config();
  mc.imaginator.customize_steps = 200;
  std::vector<std::string> texts;
  for (const auto& inst : ep.support) texts.push_back(inst.text);
  ModelState m = init_model(mc, ep.event_types, texts, 3);
  const auto pairs = detail::imagine_pairs(m, load_support(ep, mc.resolution));
  std::vector<ImageArray> images;
  for (const auto& p : pairs) images.push_back(p.image);
  const Imaginator warm = pretrain(m.imaginator, images, mc.imaginator.pretrain_steps,
                                   mc.imaginator.pretrain_learning_rate, 4, 11);
  const auto targets = customization_targets(warm, pairs, TargetPolicy::kGroundTruth, 0);
  const double v_before = mean_visual_loss(warm, pairs, targets, 20, 99);
  CustomizeOptions options;
  options.steps = 200;
  options.learning_rate = mc.imaginator.learning_rate;
  options.seed = 5;
  const Imaginator tuned = customize(warm, pairs, options);
  const double v_after = mean_visual_loss(tuned, pairs, targets, 20, 99);

  TrainConfig tc = toy_train_config(2);
  tc.k_shots = 10;
  tc.seed = 3;
  ModelState fresh = init_model(mc, ep.event_types, texts, derive_seed(tc.seed, "init"));
  const double c_before = support_loss(fresh, ep);
  TrainResult trained = train(ep, mc, tc);
  const double c_after = support_loss(trained.model, ep);

  const double v_ratio = v_after / v_before;
  const double c_ratio = c_after / c_before;
  return {v_ratio <= 0.5 && c_ratio <= 0.25,
          fmt("L_visual %.4f -> %.4f (ratio %.3f); L_class %.4f -> %.4f over %d epochs (ratio %.4f)", v_before,
              v_after, v_ratio, c_before, c_after, tc.epochs, c_ratio)};
}

struct FusionGrid {
  std::map<std::string, std::vector<double>> f1;  // mode -> per-seed macro F1
  std::string error;
};

const FusionGrid& fusion_grid() {
  static const FusionGrid grid = [] {
    FusionGrid g;
    const Dataset ds = load_dataset(write_toy_dataset(fusion_spec(), scratch_dir("acceptance_fusion"), 7));
    ExperimentConfig ec;
    ec.shots = {20};
    ec.modes = {VisualMode::kActual, VisualMode::kTextOnly, VisualMode::kNoText,
                VisualMode::kRetrieve, VisualMode::kImagine, VisualMode::kZero};
    ec.seeds = {0, 1, 2};
    const ExperimentResult r = run_experiment(ds, ec, toy_model_config(), toy_train_config(4));
    for (const auto& row : r.rows) {
      if (!row.ok()) g.error = row.status;
      g.f1[row.mode].push_back(row.macro_f1);
    }
    return g;
  }();
  return grid;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

std::string seeds_str(const std::vector<double>& v) {
  std::string out;
  for (double x : v) out += fmt("%s%.3f", out.empty() ? "" : "/", x);
  return out;
}

Outcome toy_separability() {
  const FusionGrid& g = fusion_grid();
  if (!g.error.empty()) return {false, g.error};
  const auto& actual = g.f1.at("actual");
  const double full = mean(actual), text = mean(g.f1.at("textonly")), vis = mean(g.f1.at("notext")),
               ret = mean(g.f1.at("retrieve"));
  const bool every_seed = std::all_of(actual.begin(), actual.end(), [](double f) { return f >= 0.90; });
  const bool ok = every_seed && text < full && vis < text && vis < ret && ret <= full;
  return {ok, fmt("macro-F1 over seeds 0/1/2: actual %s, textonly %s, notext %s, retrieve %s; means V %.3f < RET "
                  "%.3f <= full %.3f, L %.3f < full",
                  seeds_str(actual).c_str(), seeds_str(g.f1.at("textonly")).c_str(),
                  seeds_str(g.f1.at("notext")).c_str(), seeds_str(g.f1.at("retrieve")).c_str(), vis, ret, full, text)};
}

Outcome imagine_vs_zero() {
  const FusionGrid& g = fusion_grid();
  if (!g.error.empty()) return {false, g.error};
  const auto& im = g.f1.at("imagine");
  const auto& zero = g.f1.at("zero");
  bool ok = true;
  for (std::size_t i = 0; i < im.size(); ++i) ok = ok && im[i] >= zero[i];
  return {ok, fmt("imagine %s vs zero %s", seeds_str(im).c_str(), seeds_str(zero).c_str())};
}

Outcome metrics_oracle() {
  Rng rng(derive_seed(0, "acceptance.metrics"));
  std::uniform_int_distribution<std::size_t> classes(1, 9);
  std::uniform_int_distribution<std::size_t> count(0, 8);
  std::bernoulli_distribution include(0.5);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = classes(rng);
    std::vector<std::string> labels;
    for (std::size_t i = 0; i + 1 < k; ++i) labels.push_back("E" + std::to_string(i));
    labels.emplace_back(kNoneLabel);
    ConfusionTable t(labels);
    for (std::size_t i = 0; i < k; ++i) {
      t.tp[i] = count(rng);
      t.fp[i] = count(rng);
      t.fn[i] = count(rng);
    }
    const bool with_none = include(rng);
    const MetricsReport r = macro_prf(t, with_none);
    double p = 0.0, rec = 0.0, f = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < k; ++i) {
      if (!with_none && labels[i] == kNoneLabel) continue;
      const double tp = double(t.tp[i]), fp = double(t.fp[i]), fn = double(t.fn[i]);
      p += tp + fp > 0 ? tp / (tp + fp) : 0.0;
      rec += tp + fn > 0 ? tp / (tp + fn) : 0.0;
      f += tp > 0 ? 2.0 * tp / (2.0 * tp + fp + fn) : 0.0;
      ++n;
    }
    if (n > 0) {
      p /= double(n);
      rec /= double(n);
      f /= double(n);
    }
    worst = std::max({worst, std::abs(r.macro_p - p), std::abs(r.macro_r - rec), std::abs(r.macro_f1 - f)});
  }
  ConfusionTable hand({"A", "B"});
  hand.tp = {3, 2};
  hand.fp = {1, 2};
  hand.fn = {1, 0};
  const MetricsReport h = macro_prf(hand, true);
  const bool hand_ok = std::abs(h.per_class[0].f1 - 0.75) < 1e-12 && std::abs(h.per_class[1].f1 - 2.0 / 3.0) < 1e-12 &&
                       std::abs(h.macro_f1 - 0.7083) < 5e-5;
  return {worst <= 1e-12 && hand_ok,
          fmt("1000 random tables, max deviation %.1e; hand example F1 %.4f, %.4f, macro %.4f", worst,
              h.per_class[0].f1, h.per_class[1].f1, h.macro_f1)};
}

Outcome determinism() {
  const fs::path dir = scratch_dir("acceptance_determinism");
  const fs::path log = dir / "cli.log";
  if (run_cli("toydata --kind pair --seed 7 --out '" + (dir / "data").string() + "'", log) != 0) {
    return {false, "toydata failed: " + read_file(log)};
  }
  Json cfg = Json::parse(read_file(fs::path(VFEVENT_SOURCE_DIR) / "configs" / "toy.json"));
  cfg["dataset"] = (dir / "data" / "manifest.jsonl").string();
  cfg["train"]["n_ways"] = 2;
  cfg["train"]["k_shots"] = 10;
  cfg["shots"] = {5, 10};
  cfg["modes"] = {"textonly", "imagine", "retrieve"};
  cfg["seeds"] = {0, 1};
  std::ofstream(dir / "config.json") << cfg.dump(2);
  const std::string config = "--config '" + (dir / "config.json").string() + "'";

  std::vector<std::string> checkpoints, csvs;
  for (const char* run : {"a", "b"}) {
    const fs::path out = dir / run;
    if (run_cli("train " + config + " --out '" + (out / "train").string() + "'", log) != 0) {
      return {false, "train failed: " + read_file(log)};
    }
    if (run_cli("eval " + config + " --out '" + (out / "eval").string() + "'", log) != 0) {
      return {false, "eval failed: " + read_file(log)};
    }
    checkpoints.push_back(read_file(out / "train" / "checkpoint.vfev"));
    csvs.push_back(read_file(out / "eval" / "results.csv"));
  }
  const bool same_ckpt = !checkpoints[0].empty() && checkpoints[0] == checkpoints[1];
  const bool same_csv = !csvs[0].empty() && csvs[0] == csvs[1];
  return {same_ckpt && same_csv, fmt("checkpoint %zu bytes %s, results.csv %zu bytes %s", checkpoints[0].size(),
                                     same_ckpt ? "identical" : "DIFFER", csvs[0].size(),
                                     same_csv ? "identical" : "DIFFER")};
}

Outcome closed_forms() {
  const std::vector<std::string> types{"a", "b", "c", "d", "e", "f", "g", "h"};
  ModelState m = init_model(tiny_model_config(), types, tiny_texts(), 0);
  m.head.weight.value.setZero();
  m.head.bias.value.setZero();
  const ImageArray img = flat_image(m.config.resolution, 0.2, 0.4, -0.6);
  std::vector<ClassExample> batch;
  for (std::size_t gold = 0; gold < 9; ++gold) batch.push_back({tiny_texts()[gold % 4], &img, gold, {}});
  const double loss = class_loss(m, batch);
  const double combined = combined_loss(2.0, 30.0, 0.01);
  const bool ok = m.labels.size() == 9 && std::abs(loss - std::log(9.0)) <= 1e-9 && combined == 2.3;
  return {ok, fmt("uniform 9-class loss %.12f (ln 9 = %.12f); combined_loss(2, 30, 0.01) = %.17g", loss, std::log(9.0),
                  combined)};
}

}  // namespace

int main() {
  criterion(1, "schedule identities", schedule_identities);
  criterion(2, "noising Monte-Carlo variance", noising_variance);
  criterion(3, "gradient oracle", gradient_oracle);
  criterion(4, "freeze policy", freeze_policy);
  criterion(5, "loss reduction", loss_reduction);
  criterion(6, "end-to-end toy separability", toy_separability);
  criterion(7, "imagine vs zero", imagine_vs_zero);
  criterion(8, "metrics oracle", metrics_oracle);
  criterion(9, "determinism", determinism);
  criterion(10, "cross-entropy closed forms", closed_forms);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
