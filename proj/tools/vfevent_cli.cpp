// vfevent command-line driver: validate, train, imagine, infer, eval, toydata.

#include "vfevent/vfevent.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace vfevent;

namespace {

struct CommonFlags {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::vector<std::size_t> shots;
  std::vector<std::string> modes;
  std::string out;
  std::string checkpoint;
  std::string text;
};

void add_config_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--override", f.overrides, "dotted key=value applied after the config file")
      ->take_all()
      ->expected(1, -1);
  cmd->add_option("--seed", f.seed, "global seed (also sets the eval seed list)");
}

RunConfig resolve_config(const CommonFlags& f) {
  std::vector<std::string> overrides = f.overrides;
  if (f.seed) {
    overrides.push_back("seed=" + std::to_string(*f.seed));
    overrides.push_back("seeds=[" + std::to_string(*f.seed) + "]");
  }
  if (!f.shots.empty()) {
    Json shots = f.shots;
    overrides.push_back("shots=" + shots.dump());
  }
  if (!f.modes.empty()) {
    Json modes = f.modes;
    overrides.push_back("modes=" + modes.dump());
    overrides.push_back("mode=" + Json(f.modes.front()).dump());
  }
  if (!f.out.empty()) overrides.push_back("output_dir=" + Json(f.out).dump());
  return load_run_config(f.config.empty() ? std::nullopt : std::optional<fs::path>(f.config), overrides);
}

void write_provenance(const RunConfig& config, const std::string& command, const fs::path& path) {
  const Json doc{{"command", command}, {"config", to_json(config)}};
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

Dataset load_configured_dataset(const RunConfig& config) {
  require_paths(config);
  return load_dataset(config.dataset, config.resolved_image_root(), config.labels);
}

int cmd_validate(const CommonFlags& flags) {
  const RunConfig config = resolve_config(flags);
  require_paths(config);
  const ValidationReport report =
      validate_manifest(config.dataset, config.resolved_image_root(), config.labels, true, config.model.resolution);
  write_provenance(config, "validate", fs::path(config.output_dir) / "provenance.json");
  for (const auto& issue : report.issues) std::cout << issue.describe() << '\n';
  std::cout << report.issues.size() << (report.issues.size() == 1 ? " error" : " errors") << '\n';
  return report.ok() ? 0 : 1;
}

int cmd_train(const CommonFlags& flags) {
  const RunConfig config = resolve_config(flags);
  const Dataset dataset = load_configured_dataset(config);
  const std::size_t k = flags.shots.empty() ? config.train.k_shots : flags.shots.front();
  const Episode episode = sample_episode(dataset, config.train.n_ways, k, derive_seed(config.seed, "episode"));
  const fs::path out = config.output_dir;
  fs::create_directories(out);
  write_provenance(config, "train", out / "provenance.json");

  TrainConfig train_config = config.train;
  train_config.k_shots = k;
  auto hook = [&](ModelState& model, int epoch) {
    save_checkpoint(model, out / ("checkpoint-epoch" + std::to_string(epoch) + ".vfev"));
  };
  TrainLog partial;
  auto record = [&](const TrainRecord& r) { partial.records.push_back(r); };
  TrainResult result;
  try {
    result = train(episode, config.model, train_config, nullptr, hook, record);
  } catch (const Error&) {
    partial.write_csv(out / "train_log.csv");
    std::cerr << "training aborted; log up to the failure in " << (out / "train_log.csv").string() << '\n';
    throw;
  }
  save_checkpoint(result.model, out / "checkpoint.vfev");
  result.log.write_csv(out / "train_log.csv");

  std::cout << "checkpoint: " << (out / "checkpoint.vfev").string() << '\n';
  std::cout << "log: " << (out / "train_log.csv").string() << '\n';
  if (!result.log.records.empty()) {
    const auto& last = result.log.records.back();
    std::cout << "final " << last.stage << " step " << last.step << ": class_loss " << last.class_loss
              << " visual_loss " << last.visual_loss << " combined_loss " << last.combined_loss << '\n';
  } else {
    std::cout << "no training steps (epochs = 0)\n";
  }
  return 0;
}

int cmd_imagine(const CommonFlags& flags) {
  if (flags.checkpoint.empty()) throw Error(ErrorKind::kConfig, "--checkpoint is required");
  const ModelState model = load_checkpoint(flags.checkpoint);
  const auto ids = model.tokenizer.encode(flags.text);
  const std::uint64_t seed = flags.seed.value_or(0);
  const ImageArray image =
      synthesize(model.imaginator, ids, model.imaginator.config.sample_steps, derive_seed(seed, "imagine"));
  const fs::path out = flags.out.empty() ? fs::path("imagined.png") : fs::path(flags.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_png(image, out);
  const Json provenance{{"command", "imagine"},
                        {"checkpoint", flags.checkpoint},
                        {"text", flags.text},
                        {"seed", seed},
                        {"model", to_json(model.config)}};
  std::ofstream(fs::path(out.string() + ".json"), std::ios::trunc) << provenance.dump(2) << '\n';
  std::cout << out.string() << '\n';
  return 0;
}

int cmd_infer(const CommonFlags& flags) {
  if (flags.checkpoint.empty()) throw Error(ErrorKind::kConfig, "--checkpoint is required");
  const ModelState model = load_checkpoint(flags.checkpoint);
  const RunConfig config = resolve_config(flags);
  if (!flags.text.empty()) {
    const Instance query{"cli", flags.text, std::nullopt, std::string(kNoneLabel)};
    const QueryPrediction p{query.id, infer(query, config.mode, model, {}, config.seed), config.mode};
    std::cout << to_json(p).dump() << '\n';
    return 0;
  }
  const Dataset dataset = load_configured_dataset(config);
  const auto predictions = infer_all(dataset.instances, config.mode, model, dataset.image_root, config.seed);
  const fs::path out = fs::path(config.output_dir) / "predictions.jsonl";
  write_predictions(predictions, out);
  write_provenance(config, "infer", fs::path(config.output_dir) / "provenance.json");
  std::cout << out.string() << '\n';
  return 0;
}

int cmd_eval(const CommonFlags& flags) {
  const RunConfig config = resolve_config(flags);
  const Dataset dataset = load_configured_dataset(config);
  std::optional<ModelState> initial;
  if (!flags.checkpoint.empty()) initial = load_checkpoint(flags.checkpoint);
  const fs::path out = config.output_dir;
  fs::create_directories(out);
  write_provenance(config, "eval", out / "provenance.json");

  const ExperimentResult result =
      run_experiment(dataset, config.experiment(), config.model, config.train, initial ? &*initial : nullptr);
  write_results_csv(result, out / "results.csv");
  Json echo = to_json(config);
  if (initial) echo["checkpoint"] = flags.checkpoint;
  write_results_json(result, echo, out / "results.json");

  bool internal = false;
  for (const auto& row : result.rows) {
    if (row.ok()) {
      std::printf("K=%zu mode=%s seed=%llu macro_f1=%.4f macro_p=%.4f macro_r=%.4f\n", row.shots, row.mode.c_str(),
                  static_cast<unsigned long long>(row.seed), row.macro_f1, row.macro_p, row.macro_r);
    } else {
      std::printf("K=%zu mode=%s seed=%llu %s\n", row.shots, row.mode.c_str(),
                  static_cast<unsigned long long>(row.seed), row.status.c_str());
      internal = internal || row.internal_failure;
    }
  }
  std::cout << (out / "results.csv").string() << '\n';
  if (!result.any_failed()) return 0;
  return internal ? 2 : 1;
}

int cmd_toydata(const std::string& kind, const std::string& out, std::uint64_t seed) {
  ToySpec spec;
  if (kind == "pair") {
    spec = colour_pair_spec();
  } else if (kind == "fusion") {
    spec = fusion_spec();
  } else {
    throw Error(ErrorKind::kConfig, "unknown toy dataset kind '" + kind + "' (pair or fusion)");
  }
  std::cout << write_toy_dataset(spec, out, seed).string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot event detection with text-conditioned visual imagination"};
  app.require_subcommand(1);
  CommonFlags flags;

  auto* validate = app.add_subcommand("validate", "check a dataset manifest and its images");
  add_config_flags(validate, flags);

  auto* train = app.add_subcommand("train", "train on one sampled episode and write a checkpoint");
  add_config_flags(train, flags);
  train->add_option("--shots", flags.shots, "K for the episode")->expected(1);
  train->add_option("--out", flags.out, "output directory");

  auto* imagine = app.add_subcommand("imagine", "synthesize an image from text");
  imagine->add_option("--checkpoint", flags.checkpoint, "model archive")->required();
  imagine->add_option("--text", flags.text, "prompt")->required();
  imagine->add_option("--seed", flags.seed, "sampler seed");
  imagine->add_option("--out", flags.out, "PNG path");

  auto* infer = app.add_subcommand("infer", "classify a manifest (or one --text) with a checkpoint");
  add_config_flags(infer, flags);
  infer->add_option("--checkpoint", flags.checkpoint, "model archive")->required();
  infer->add_option("--mode", flags.modes, "visual mode")->expected(1);
  infer->add_option("--text", flags.text, "single query text instead of the dataset");
  infer->add_option("--out", flags.out, "output directory");

  auto* eval = app.add_subcommand("eval", "run the K-shot x mode x seed grid");
  add_config_flags(eval, flags);
  eval->add_option("--checkpoint", flags.checkpoint, "initial model archive");
  eval->add_option("--shots", flags.shots, "K values")->delimiter(',');
  eval->add_option("--mode", flags.modes, "visual modes")->delimiter(',');
  eval->add_option("--out", flags.out, "output directory");

  std::string toy_kind = "fusion";
  std::string toy_out = "toy";
  std::uint64_t toy_seed = 0;
  auto* toydata = app.add_subcommand("toydata", "write a synthetic colour-coded dataset");
  toydata->add_option("--kind", toy_kind, "pair or fusion");
  toydata->add_option("--out", toy_out, "output directory");
  toydata->add_option("--seed", toy_seed, "generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*validate) return cmd_validate(flags);
    if (*train) return cmd_train(flags);
    if (*imagine) return cmd_imagine(flags);
    if (*infer) return cmd_infer(flags);
    if (*eval) return cmd_eval(flags);
    if (*toydata) return cmd_toydata(toy_kind, toy_out, toy_seed);
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    return e.is_user_error() ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
