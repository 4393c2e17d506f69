#pragma once

#include "vfevent/core.hpp"
#include "vfevent/data.hpp"
#include "vfevent/inference.hpp"
#include "vfevent/serialization.hpp"
#include "vfevent/training.hpp"

#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vfevent {

struct ConfusionTable {
  std::vector<std::string> labels;
  std::vector<std::size_t> tp, fp, fn;
  std::size_t total = 0;

  explicit ConfusionTable(std::vector<std::string> names = {})
      : labels(std::move(names)), tp(labels.size()), fp(labels.size()), fn(labels.size()) {}

  std::size_t index_of(std::string_view label) const {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == label) return i;
    }
    throw Error(ErrorKind::kInput, "unknown label '" + std::string(label) + "'");
  }
};

/// Per-label TP/FP/FN tally over `labels` (event types plus "none").
inline ConfusionTable confusion(std::span<const std::string> preds, std::span<const std::string> golds,
                                const std::vector<std::string>& labels) {
  if (preds.size() != golds.size()) {
    throw Error(ErrorKind::kInput, "prediction / gold length mismatch: " + std::to_string(preds.size()) + " vs " +
                                       std::to_string(golds.size()));
  }
  ConfusionTable table(labels);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const std::size_t p = table.index_of(preds[i]);
    const std::size_t g = table.index_of(golds[i]);
    if (p == g) {
      ++table.tp[p];
    } else {
      ++table.fp[p];
      ++table.fn[g];
    }
  }
  table.total = preds.size();
  return table;
}

struct ClassMetrics {
  std::string label;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0;
};

struct MetricsReport {
  std::vector<ClassMetrics> per_class;
  double macro_p = 0.0;
  double macro_r = 0.0;
  double macro_f1 = 0.0;
  bool include_none = false;
  std::size_t shots = 0;
  std::string mode;
  std::uint64_t seed = 0;
  std::size_t count = 0;
  std::string status = "ok";  // "ok" or "error: <message>"
  bool internal_failure = false;  // failed on numerics rather than on data or config

  bool ok() const { return status == "ok"; }

  const ClassMetrics* find(std::string_view label) const {
    for (const auto& c : per_class) {
      if (c.label == label) return &c;
    }
    return nullptr;
  }
};

inline double safe_ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

inline MetricsReport macro_prf(const ConfusionTable& table, bool include_none = false) {
  MetricsReport report;
  report.include_none = include_none;
  report.count = table.total;
  std::size_t averaged = 0;
  for (std::size_t i = 0; i < table.labels.size(); ++i) {
    ClassMetrics m{table.labels[i], 0.0, 0.0, 0.0, table.tp[i], table.fp[i], table.fn[i]};
    m.precision = safe_ratio(double(m.tp), double(m.tp + m.fp));
    m.recall = safe_ratio(double(m.tp), double(m.tp + m.fn));
    m.f1 = safe_ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
    if (include_none || m.label != kNoneLabel) {
      report.macro_p += m.precision;
      report.macro_r += m.recall;
      report.macro_f1 += m.f1;
      ++averaged;
    }
    report.per_class.push_back(std::move(m));
  }
  if (averaged > 0) {
    report.macro_p /= double(averaged);
    report.macro_r /= double(averaged);
    report.macro_f1 /= double(averaged);
  }
  return report;
}

inline MetricsReport evaluate_predictions(std::span<const QueryPrediction> predictions,
                                          std::span<const Instance> queries, const std::vector<std::string>& labels,
                                          bool include_none) {
  std::vector<std::string> preds, golds;
  for (const auto& p : predictions) preds.push_back(p.prediction.predicted);
  for (const auto& q : queries) golds.push_back(q.label);
  return macro_prf(confusion(preds, golds, labels), include_none);
}

struct ExperimentConfig {
  std::vector<std::size_t> shots{5, 10, 15, 20};
  std::vector<VisualMode> modes{VisualMode::kImagine};
  std::vector<std::uint64_t> seeds{0};
  bool include_none = false;
};

struct ExperimentResult {
  std::vector<MetricsReport> rows;  // ordered (K, mode, seed)
  std::vector<std::string> labels;  // CSV per-class columns

  bool any_failed() const {
    for (const auto& r : rows) {
      if (!r.ok()) return true;
    }
    return false;
  }
};

/// Runs the (K, mode, seed) grid: sample an episode, train, infer on the
/// episode queries, score. Models are shared between modes that need the same
/// training modality. A failing cell is recorded and the grid continues.
inline ExperimentResult run_experiment(const Dataset& dataset, const ExperimentConfig& experiment,
                                       const ModelConfig& model_config, const TrainConfig& train_config,
                                       const ModelState* initial = nullptr) {
  ExperimentResult result;
  result.labels = class_names(dataset.event_types);
  const std::size_t n_modes = experiment.modes.size();
  const std::size_t n_seeds = experiment.seeds.size();
  result.rows.resize(experiment.shots.size() * n_modes * n_seeds);

  for (std::size_t ki = 0; ki < experiment.shots.size(); ++ki) {
    const std::size_t k = experiment.shots[ki];
    for (std::size_t si = 0; si < n_seeds; ++si) {
      const std::uint64_t seed = experiment.seeds[si];
      std::optional<Episode> episode;
      std::exception_ptr episode_error;
      try {
        episode = sample_episode(dataset, train_config.n_ways, k, derive_seed(seed, "episode"));
      } catch (...) {
        episode_error = std::current_exception();
      }
      std::map<Modality, ModelState> trained;
      std::map<Modality, std::exception_ptr> train_errors;
      for (std::size_t mi = 0; mi < n_modes; ++mi) {
        const VisualMode mode = experiment.modes[mi];
        MetricsReport& row = result.rows[(ki * n_modes + mi) * n_seeds + si];
        try {
          if (episode_error) std::rethrow_exception(episode_error);
          const Modality modality = training_modality(mode);
          if (auto e = train_errors.find(modality); e != train_errors.end()) std::rethrow_exception(e->second);
          if (!trained.count(modality)) {
            TrainConfig cfg = train_config;
            cfg.seed = seed;
            cfg.k_shots = k;
            cfg.modality = modality;
            try {
              trained.emplace(modality, train(*episode, model_config, cfg, initial).model);
            } catch (...) {
              train_errors[modality] = std::current_exception();
              throw;
            }
          }
          const ModelState& model = trained.at(modality);
          const auto predictions = infer_all(episode->queries, mode, model, episode->image_root, seed);
          row = evaluate_predictions(predictions, episode->queries, model.labels, experiment.include_none);
        } catch (const Error& e) {
          row = MetricsReport{};
          row.status = std::string("error: ") + e.what();
          row.internal_failure = !e.is_user_error();
        } catch (const std::exception& e) {
          row = MetricsReport{};
          row.status = std::string("error: ") + e.what();
          row.internal_failure = true;
        }
        row.shots = k;
        row.mode = to_string(mode);
        row.seed = seed;
        row.include_none = experiment.include_none;
      }
    }
  }
  return result;
}

namespace detail {

inline std::string fmt_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace detail

inline void write_results_csv(const ExperimentResult& result, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << "shots,mode,seed,macro_f1,macro_p,macro_r";
  for (const auto& label : result.labels) out << ",f1_" << label << ",p_" << label << ",r_" << label;
  out << ",status\n";
  for (const auto& row : result.rows) {
    out << row.shots << ',' << row.mode << ',' << row.seed;
    if (row.ok()) {
      out << ',' << detail::fmt_metric(row.macro_f1) << ',' << detail::fmt_metric(row.macro_p) << ','
          << detail::fmt_metric(row.macro_r);
    } else {
      out << ",,,";
    }
    for (const auto& label : result.labels) {
      const ClassMetrics* m = row.ok() ? row.find(label) : nullptr;
      if (m) {
        out << ',' << detail::fmt_metric(m->f1) << ',' << detail::fmt_metric(m->precision) << ','
            << detail::fmt_metric(m->recall);
      } else {
        out << ",,,";
      }
    }
    out << ',' << detail::csv_escape(row.status) << '\n';
  }
}

inline Json to_json(const MetricsReport& r) {
  Json per_class = Json::array();
  for (const auto& c : r.per_class) {
    per_class.push_back({{"label", c.label}, {"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1},
                         {"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}});
  }
  Json j{{"shots", r.shots}, {"mode", r.mode}, {"seed", r.seed}, {"status", r.status}};
  if (r.ok()) {
    j["macro_f1"] = r.macro_f1;
    j["macro_p"] = r.macro_p;
    j["macro_r"] = r.macro_r;
    j["count"] = r.count;
    j["include_none"] = r.include_none;
    j["per_class"] = per_class;
  }
  return j;
}

/// Mean and sample standard deviation of macro metrics over successful seeds,
/// one entry per (K, mode) in row order.
inline Json aggregate_over_seeds(const ExperimentResult& result) {
  Json out = Json::array();
  std::vector<std::pair<std::size_t, std::string>> keys;
  std::map<std::pair<std::size_t, std::string>, std::vector<const MetricsReport*>> groups;
  for (const auto& row : result.rows) {
    const auto key = std::make_pair(row.shots, row.mode);
    if (!groups.count(key)) keys.push_back(key);
    auto& g = groups[key];
    if (row.ok()) g.push_back(&row);
  }
  auto stats = [](const std::vector<const MetricsReport*>& rows, double MetricsReport::*field) {
    double mean = 0.0;
    for (const auto* r : rows) mean += r->*field;
    mean /= double(rows.size());
    double var = 0.0;
    for (const auto* r : rows) var += (r->*field - mean) * (r->*field - mean);
    const double sd = rows.size() > 1 ? std::sqrt(var / double(rows.size() - 1)) : 0.0;
    return Json{{"mean", mean}, {"std", sd}};
  };
  for (const auto& key : keys) {
    const auto& rows = groups[key];
    Json j{{"shots", key.first}, {"mode", key.second}, {"seeds", rows.size()}};
    if (!rows.empty()) {
      j["macro_f1"] = stats(rows, &MetricsReport::macro_f1);
      j["macro_p"] = stats(rows, &MetricsReport::macro_p);
      j["macro_r"] = stats(rows, &MetricsReport::macro_r);
    }
    out.push_back(j);
  }
  return out;
}

inline void write_results_json(const ExperimentResult& result, const Json& config_echo,
                               const std::filesystem::path& path) {
  Json rows = Json::array();
  for (const auto& r : result.rows) rows.push_back(to_json(r));
  const Json doc{{"config", config_echo}, {"rows", rows}, {"aggregates", aggregate_over_seeds(result)}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

}  // namespace vfevent
