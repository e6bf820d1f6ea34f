#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>

#include "metaaug/datastore.hpp"
#include "metaaug/episodic.hpp"
#include "metaaug/learner.hpp"

namespace metaaug {

struct RunConfig {
  // Exactly one of the two is set.
  std::optional<std::filesystem::path> dataset_path;
  std::optional<SyntheticSpec> synthetic;

  TaskConfig task;           // evaluation task; task.shot is the test shot
  int train_shot = 0;        // 0 means "same as task.shot"
  HeadConfig head;
  std::vector<int> widths{16, 32, 64, 128};
  // Multiplies the He init of the last conv block. Unnormalized squared
  // distances saturate the prototype softmax at gain 1.
  double init_gain = 1.0;
  Precision precision = Precision::f32;
  SgdConfig sgd;
  LrSchedule schedule = LrSchedule::desk_default();

  AugmentationPool pool = preset_pool("baseline");
  bool stack_baseline = false;  // apply the baseline descriptor before each pool descriptor
  int m = 1;
  int batch = 8;
  int episodes_per_epoch = 200;
  int epochs = 30;
  int val_episodes = 200;         // per-epoch validation episodes
  int train_eval_episodes = 200;  // per-epoch clean train-split episodes for the curve

  std::uint64_t seed = 0;
  std::filesystem::path output;
  AugmentDefaults augment;
  std::optional<std::filesystem::path> init_checkpoint;
  int threads = 1;

  int effective_train_shot() const { return train_shot > 0 ? train_shot : task.shot; }
  TaskConfig train_task() const;
  void validate() const;
};

inline constexpr int kMaxCandidates = 64;

// Relative paths inside the document are resolved against `base_dir`.
RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& file);
nlohmann::json to_json(const RunConfig& config);

AugmentationPool parse_pool(const nlohmann::json& j);
nlohmann::json pool_to_json(const AugmentationPool& pool);
AugmentDefaults parse_augment(const nlohmann::json& j, AugmentDefaults base = {});
nlohmann::json augment_to_json(const AugmentDefaults& a);

FewShotDataset materialize_dataset(const RunConfig& config);

nlohmann::json read_json_file(const std::filesystem::path& file);

}  // namespace metaaug
