#pragma once

#include <map>
#include <nlohmann/json_fwd.hpp>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "metaaug/datastore.hpp"
#include "metaaug/imgaug.hpp"

namespace metaaug {

enum class Mode { support, query, task, shot };

enum class Technique {
  cutmix,
  mixup,
  self_mix,
  random_erase,
  rotation,
  hflip,
  random_crop,
  color_jitter,
  solarize,
  drop_channel,
  feature_mixup,
  combine_labels,
  duplicate,
};

std::string_view to_string(Mode mode) noexcept;
std::string_view to_string(Technique technique) noexcept;
Mode parse_mode(std::string_view text);
Technique parse_technique(std::string_view text);
bool supports(Mode mode, Technique technique) noexcept;

struct AugmentEntry {
  Mode mode = Mode::query;
  Technique technique = Technique::cutmix;
  std::map<std::string, double> params;

  double param(const std::string& key, double fallback) const;
  friend bool operator==(const AugmentEntry&, const AugmentEntry&) = default;
};

// One element M of the augmentation set S: an ordered list of mode/technique
// entries, at most one of them task-level.
class AugmentationDescriptor {
 public:
  AugmentationDescriptor() = default;
  explicit AugmentationDescriptor(std::vector<AugmentEntry> entries);

  const std::vector<AugmentEntry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }
  std::optional<Technique> task_technique() const;
  // Human-readable form, e.g. "CutMix(Q)+Rotation(T)"; "identity" when empty.
  std::string name() const;

  friend bool operator==(const AugmentationDescriptor&, const AugmentationDescriptor&) = default;

 private:
  std::vector<AugmentEntry> entries_;
};

struct AugmentationPool {
  std::string name;
  std::vector<AugmentationDescriptor> descriptors;

  int size() const { return static_cast<int>(descriptors.size()); }
  void validate() const;
};

void to_json(nlohmann::json& j, const AugmentEntry& entry);
void from_json(const nlohmann::json& j, AugmentEntry& entry);
void to_json(nlohmann::json& j, const AugmentationDescriptor& descriptor);
void from_json(const nlohmann::json& j, AugmentationDescriptor& descriptor);

AugmentationDescriptor baseline_descriptor();
// single | medium | large | cutmix-only | identity | baseline
AugmentationPool preset_pool(std::string_view name);

enum class ClassTransform {
  identity,
  large_rotation,
  class_mixup,
  class_cutmix,
  combined_labels,
  class_random_erase,
  class_drop_channel,
};

std::string_view to_string(ClassTransform transform) noexcept;

struct VirtualClass {
  ClassTransform transform = ClassTransform::identity;
  int base = -1;          // dataset class index
  int partner = -1;       // second parent for pair transforms
  int rotation_k = 0;
  Box erase_box{};
  std::uint64_t noise_seed = 0;
  int channel = 0;

  bool is_pair() const { return partner >= 0; }
  bool shares_base(const VirtualClass& other) const;
  friend bool operator==(const VirtualClass&, const VirtualClass&) = default;
};

struct ClassPool {
  Split split = Split::train;
  int base_classes = 0;
  std::optional<Technique> technique;
  std::vector<VirtualClass> classes;

  int size() const { return static_cast<int>(classes.size()); }
};

// Identity virtual classes for every base class of `split`, plus the
// classes minted by the task-level technique when given.
ClassPool build_class_pool(const FewShotDataset& dataset, Split split,
                           std::optional<Technique> task_technique, RngStream rng,
                           const AugmentDefaults& params = {});

struct TaskConfig {
  int way = 5;
  int shot = 1;
  int query = 15;
  Split split = Split::train;
  // When false, two virtual classes derived from a common base class never
  // appear in the same episode.
  bool allow_shared_base = true;

  void validate() const;
};

struct SampleSource {
  int class_index = -1;
  int image_index = -1;
  friend bool operator==(const SampleSource&, const SampleSource&) = default;
};

struct EpisodeSample {
  Image image;  // raw [0,255] scale
  SoftLabel label;
  std::vector<SampleSource> sources;
};

struct FeatureMixupPlan {
  bool support = false;
  bool query = false;
  double alpha = 1.0;
};

struct Episode {
  int ways = 0;
  std::vector<EpisodeSample> support;
  std::vector<EpisodeSample> query;
  std::vector<VirtualClass> way_classes;
  // Support size before shot augmentation (N * K).
  int base_support_size = 0;
  std::vector<std::string> provenance;
  FeatureMixupPlan feature_mixup;
};

Episode sample_episode(const FewShotDataset& dataset, const ClassPool& pool, const TaskConfig& cfg,
                       RngStream rng, const AugmentDefaults& params = {});

// Applies the support, query and shot entries of `descriptor`. Task entries
// are consumed by build_class_pool and skipped here.
Episode apply_descriptor(const Episode& episode, const AugmentationDescriptor& descriptor,
                         RngStream rng, const AugmentDefaults& params = {});

// Appends `copies` transformed copies of every original support image.
void append_shot_copies(Episode& episode, Technique technique, int copies, RngStream& rng,
                        const AugmentDefaults& params = {});

}  // namespace metaaug
