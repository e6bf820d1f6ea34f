#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "metaaug/image.hpp"

namespace metaaug {

enum class Split { train, val, test };

std::string_view to_string(Split split) noexcept;
Split parse_split(std::string_view text);

// Per-channel statistics on the [0,1] scale (pixel / 255).
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  bool empty() const { return mean.empty(); }
  friend bool operator==(const ChannelStats&, const ChannelStats&) = default;
};

struct ClassData {
  std::string id;
  Split split = Split::train;
  std::vector<RawImage> images;
};

// Immutable after construction. Invariants checked on construction: class ids
// unique (so splits are disjoint), uniform geometry, non-empty classes.
class FewShotDataset {
 public:
  FewShotDataset(Geometry geometry, std::vector<ClassData> classes);

  const Geometry& geometry() const { return geometry_; }
  const std::vector<ClassData>& classes() const { return classes_; }
  const ClassData& cls(int index) const { return classes_.at(static_cast<std::size_t>(index)); }
  int size() const { return static_cast<int>(classes_.size()); }

  std::vector<int> class_indices(Split split) const;

  // Computed from the train split only; empty when there are no train classes.
  const ChannelStats& stats() const { return stats_; }

 private:
  Geometry geometry_;
  std::vector<ClassData> classes_;
  ChannelStats stats_;
};

FewShotDataset load_dataset(const std::filesystem::path& root);
void write_dataset(const FewShotDataset& dataset, const std::filesystem::path& root);

struct SyntheticSpec {
  int train_classes = 16;
  int val_classes = 4;
  int test_classes = 4;
  int images_per_class = 40;
  int channels = 3;
  int height = 32;
  int width = 32;
  std::uint64_t seed = 0;
};

FewShotDataset generate_synthetic(const SyntheticSpec& spec);

ChannelStats compute_stats(const std::vector<const RawImage*>& images);

inline double normalize_value(double raw, double mean, double stddev) {
  return (raw / kDomainMax - mean) / stddev;
}

// (x/255 - mean_c) / std_c per channel. Throws DatasetError
// (degenerate_statistics) when some std_c is zero or non-finite.
Image normalize(const RawImage& image, const ChannelStats& stats);
Image normalize(const Image& raw_scale, const ChannelStats& stats);
void check_stats(const ChannelStats& stats, int channels);

}  // namespace metaaug
