#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ensemble_forge {

enum class ErrorKind {
  wrong_magic,
  truncated_payload,
  trailing_bytes,
  label_out_of_range,
  count_mismatch,
  count_too_large,
  non_positive_scale,
  shape_mismatch,
  non_positive_learning_rate,
  empty_dataset,
  index_out_of_range,
  unsorted_indices,
  empty_ensemble,
  mixed_variants,
  label_count_mismatch,
  mean_offset_mismatch,
  unknown_model_id,
  config_invalid,
  io_failure,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::wrong_magic: return "WrongMagic";
    case ErrorKind::truncated_payload: return "TruncatedPayload";
    case ErrorKind::trailing_bytes: return "TrailingBytes";
    case ErrorKind::label_out_of_range: return "LabelOutOfRange";
    case ErrorKind::count_mismatch: return "CountMismatch";
    case ErrorKind::count_too_large: return "CountTooLarge";
    case ErrorKind::non_positive_scale: return "NonPositiveScale";
    case ErrorKind::shape_mismatch: return "ShapeMismatch";
    case ErrorKind::non_positive_learning_rate: return "NonPositiveLearningRate";
    case ErrorKind::empty_dataset: return "EmptyDataset";
    case ErrorKind::index_out_of_range: return "IndexOutOfRange";
    case ErrorKind::unsorted_indices: return "UnsortedIndices";
    case ErrorKind::empty_ensemble: return "EmptyEnsemble";
    case ErrorKind::mixed_variants: return "MixedVariants";
    case ErrorKind::label_count_mismatch: return "LabelCountMismatch";
    case ErrorKind::mean_offset_mismatch: return "MeanOffsetMismatch";
    case ErrorKind::unknown_model_id: return "UnknownModelId";
    case ErrorKind::config_invalid: return "ConfigInvalid";
    case ErrorKind::io_failure: return "IoFailure";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the ErrorKind codes so
/// callers (and the CLI exit-code mapping) can dispatch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace ensemble_forge
