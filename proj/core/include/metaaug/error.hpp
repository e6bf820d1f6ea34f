#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace metaaug {

// Coarse failure classes. The CLI maps each to a distinct exit code and
// prints the name so scripts can branch on it.
enum class ErrorCategory {
  config,
  io,
  format,
  geometry,
  numeric,
  data,
};

std::string_view to_string(ErrorCategory category) noexcept;
int exit_code(ErrorCategory category) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error(ErrorCategory::config, message) {}
};

class GeometryError : public Error {
 public:
  explicit GeometryError(const std::string& message) : Error(ErrorCategory::geometry, message) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& message) : Error(ErrorCategory::data, message) {}
};

enum class DatasetErrc {
  missing_manifest,
  corrupt_manifest,
  missing_blob,
  blob_header_mismatch,
  corrupt_blob,
  split_overlap,
  inconsistent_geometry,
  invalid_spec,
  degenerate_statistics,
};

std::string_view to_string(DatasetErrc errc) noexcept;

class DatasetError : public Error {
 public:
  DatasetError(DatasetErrc errc, const std::string& message);

  DatasetErrc errc() const noexcept { return errc_; }

 private:
  DatasetErrc errc_;
};

// Non-finite value detected inside the learner. `stage` names the step of
// the forward/backward pass; `candidate` is the Meta-MaxUp candidate index
// when the failure happened while scoring candidates, -1 otherwise.
class NumericError : public Error {
 public:
  NumericError(std::string stage, int candidate = -1);

  const std::string& stage() const noexcept { return stage_; }
  int candidate() const noexcept { return candidate_; }

  NumericError with_candidate(int candidate) const { return NumericError(stage_, candidate); }

 private:
  std::string stage_;
  int candidate_;
};

}  // namespace metaaug
