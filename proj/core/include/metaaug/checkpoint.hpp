#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <vector>

#include "metaaug/learner.hpp"

namespace metaaug {

struct CurvePoint {
  int epoch = 0;
  double train_acc = 0.0;  // percent
  double val_acc = 0.0;    // percent
  double loss = 0.0;       // mean selected loss
  double lr = 0.0;

  friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

void to_json(nlohmann::json& j, const CurvePoint& p);
void from_json(const nlohmann::json& j, CurvePoint& p);

// Parameters are always serialized as 32-bit floats. `epoch` counts completed
// epochs. The optimizer velocity and curve history make resume exact.
struct Checkpoint {
  HeadConfig head;
  ChannelStats stats;
  Precision precision = Precision::f32;
  std::uint64_t seed = 0;
  int epoch = 0;
  ModelParams<float> params{ArchConfig{}};
  std::optional<Eigen::VectorXf> velocity;
  std::vector<CurvePoint> curve;
  nlohmann::json extra = nlohmann::json::object();

  const ArchConfig& arch() const { return params.arch(); }
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

// Writes through a temporary file and renames, so a crash never leaves a
// truncated checkpoint behind.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Hex digest of the encoded parameter blocks; identifies an initialization.
std::string params_fingerprint(const ModelParams<float>& params);

}  // namespace metaaug
