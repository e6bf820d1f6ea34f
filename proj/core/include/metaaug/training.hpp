#pragma once

#include <filesystem>
#include <functional>
#include <optional>

#include "metaaug/checkpoint.hpp"
#include "metaaug/metamaxup.hpp"
#include "metaaug/run_config.hpp"

namespace metaaug {

struct TrainingOptions {
  bool resume = false;
  // Stop once this many epochs are complete, as if interrupted.
  std::optional<int> stop_after_epoch;
  std::function<void(const CurvePoint&, const EpochStats&)> on_epoch;
  CandidateObserver observer;
};

// Run directory layout:
//   config.json, curves.csv, summary.json,
//   checkpoints/epoch_NNN.fsck (NNN = completed epochs), final.fsck
std::filesystem::path run_training(const RunConfig& config, const TrainingOptions& options = {});

std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, int completed_epochs);
std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& run_dir);

// Initial parameters for a config: loaded from init_checkpoint when set,
// otherwise He-initialized from the (seed, init) stream.
Checkpoint initial_checkpoint(const RunConfig& config, const FewShotDataset& dataset);

// Fails with a config/data error if the dataset cannot serve the configured
// tasks, so that problems surface before any training compute.
void check_dataset_for(const RunConfig& config, const FewShotDataset& dataset);

}  // namespace metaaug
