#include "metaaug/error.hpp"

namespace metaaug {

std::string_view to_string(ErrorCategory category) noexcept {
  switch (category) {
    case ErrorCategory::config: return "config";
    case ErrorCategory::io: return "io";
    case ErrorCategory::format: return "format";
    case ErrorCategory::geometry: return "geometry";
    case ErrorCategory::numeric: return "numeric";
    case ErrorCategory::data: return "data";
  }
  return "unknown";
}

int exit_code(ErrorCategory category) noexcept {
  switch (category) {
    case ErrorCategory::config: return 2;
    case ErrorCategory::io: return 3;
    case ErrorCategory::format: return 4;
    case ErrorCategory::geometry: return 5;
    case ErrorCategory::numeric: return 6;
    case ErrorCategory::data: return 7;
  }
  return 1;
}

std::string_view to_string(DatasetErrc errc) noexcept {
  switch (errc) {
    case DatasetErrc::missing_manifest: return "missing_manifest";
    case DatasetErrc::corrupt_manifest: return "corrupt_manifest";
    case DatasetErrc::missing_blob: return "missing_blob";
    case DatasetErrc::blob_header_mismatch: return "blob_header_mismatch";
    case DatasetErrc::corrupt_blob: return "corrupt_blob";
    case DatasetErrc::split_overlap: return "split_overlap";
    case DatasetErrc::inconsistent_geometry: return "inconsistent_geometry";
    case DatasetErrc::invalid_spec: return "invalid_spec";
    case DatasetErrc::degenerate_statistics: return "degenerate_statistics";
  }
  return "unknown";
}

namespace {

ErrorCategory category_of(DatasetErrc errc) {
  switch (errc) {
    case DatasetErrc::missing_manifest:
    case DatasetErrc::missing_blob: return ErrorCategory::io;
    case DatasetErrc::invalid_spec: return ErrorCategory::config;
    case DatasetErrc::degenerate_statistics: return ErrorCategory::data;
    default: return ErrorCategory::format;
  }
}

}  // namespace

DatasetError::DatasetError(DatasetErrc errc, const std::string& message)
    : Error(category_of(errc), std::string(to_string(errc)) + ": " + message), errc_(errc) {}

NumericError::NumericError(std::string stage, int candidate)
    : Error(ErrorCategory::numeric,
            "non-finite value in stage '" + stage + "'" +
                (candidate >= 0 ? " (candidate " + std::to_string(candidate) + ")" : "")),
      stage_(std::move(stage)),
      candidate_(candidate) {}

}  // namespace metaaug
