#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "metaaug/checkpoint.hpp"
#include "metaaug/run_config.hpp"

namespace metaaug {

struct EvalReport {
  int episodes = 0;
  double mean = 0.0;    // percent
  double radius = 0.0;  // one standard error, percent
  std::vector<double> accuracies;  // per episode, fraction in [0, 1]
  std::string fingerprint;
  std::string shot_aug = "none";
  int copies = 0;
};

// mean = 100 * avg(a); radius = 100 * sample_std(a) / sqrt(n). Needs n >= 2.
EvalReport summarize_accuracies(std::vector<double> accuracies);

struct EvalOptions {
  TaskConfig task;  // split must be val or test, except for train-split curve accuracy
  int episodes = 1000;
  std::optional<Technique> shot_aug;  // nullopt: no copies
  int copies = 1;
  std::uint64_t seed = 0;
  int threads = 1;
  Purpose purpose = Purpose::eval_episode;
};

// hflip | rot90 | crop | duplicate; "none" and "identity" give nullopt.
std::optional<Technique> parse_shot_aug(std::string_view text);
std::string shot_aug_name(std::optional<Technique> technique);

// Episode e of an evaluation: un-augmented, keyed (seed, 0, e, purpose).
Episode evaluation_episode(const FewShotDataset& dataset, const ClassPool& pool, const EvalOptions& options, int e);

template <class S>
EvalReport evaluate(const ModelParams<S>& params, const FewShotDataset& dataset, const ChannelStats& stats,
                    const HeadConfig& head, const EvalOptions& options);

// Evaluates a checkpoint at the precision it was trained with.
EvalReport evaluate_checkpoint(const Checkpoint& checkpoint, const FewShotDataset& dataset,
                               const EvalOptions& options);

nlohmann::json to_json(const EvalReport& report, bool with_episodes = false);

struct RunSummary {
  int best_epoch = 0;
  double best_val_acc = 0.0;
  double final_train_acc = 0.0;
  double final_val_acc = 0.0;
  double gap = 0.0;        // train - val at the best epoch
  double final_gap = 0.0;  // train - val at the last epoch
  int epochs = 0;
};

RunSummary summarize_curve(const std::vector<CurvePoint>& curve);
nlohmann::json to_json(const RunSummary& summary);

std::string format_number(double value);
std::string curves_csv(const std::vector<CurvePoint>& curve);

// Rewrites curves.csv and summary.json of a run directory from its latest
// checkpoint and returns the summary.
RunSummary emit_curves(const std::filesystem::path& run_dir);

// Writes text with LF line endings, replacing any existing file.
void write_text(const std::filesystem::path& file, const std::string& text);

struct ResultTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string csv() const;
};

// grid: {"cells": [{"mode": "query", "technique": "cutmix", "params": {...}}
//                  | {"name": "...", "descriptor": [entries]}],
//        "shots": [1, 5], "split": "test", "episodes": 1000}
// The baseline row is always included.
ResultTable ablate_modes(const RunConfig& config, const nlohmann::json& grid);

// grid: {"pools": ["medium", "large"], "m": [1, 2, 4], "shots": [1, 5],
//        "split": "test", "episodes": 1000}
ResultTable sweep_maxup(const RunConfig& config, const nlohmann::json& grid);

}  // namespace metaaug
