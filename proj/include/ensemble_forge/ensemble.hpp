#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ensemble_forge/byte_io.hpp"
#include "ensemble_forge/error.hpp"
#include "ensemble_forge/nnet.hpp"
#include "ensemble_forge/trainer.hpp"

namespace ensemble_forge {

/// `traditional` is the single serially trained baseline; it shares the plain
/// pipeline but is labelled separately in every output.
enum class Variant : std::uint32_t { plain = 0, bootstrap = 1, traditional = 2 };

inline constexpr std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::plain: return "plain";
    case Variant::bootstrap: return "bootstrap";
    case Variant::traditional: return "traditional";
  }
  return "plain";
}

inline std::optional<Variant> parse_variant(std::string_view name) {
  for (auto v : {Variant::plain, Variant::bootstrap, Variant::traditional})
    if (name == to_string(v)) return v;
  return std::nullopt;
}

struct LogitMatrix {
  int model_id = 0;
  int iteration = 0;
  Variant variant = Variant::plain;
  std::vector<double> values;  // rows x 10, row-major

  std::size_t rows() const { return values.size() / kOutputSize; }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(values).subspan(i * kOutputSize, kOutputSize);
  }
  bool operator==(const LogitMatrix&) const = default;
};

namespace detail {

inline std::vector<const LogitMatrix*> by_model_id(std::span<const LogitMatrix> logits) {
  std::vector<const LogitMatrix*> ordered;
  ordered.reserve(logits.size());
  for (const auto& m : logits) ordered.push_back(&m);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const LogitMatrix* a, const LogitMatrix* b) { return a->model_id < b->model_id; });
  return ordered;
}

inline void check_compatible(const LogitMatrix& reference, const LogitMatrix& m) {
  if (m.values.size() != reference.values.size() || m.values.size() % kOutputSize != 0)
    throw Error(ErrorKind::shape_mismatch, "logit matrices differ in shape");
  if (m.variant != reference.variant || m.iteration != reference.iteration)
    throw Error(ErrorKind::mixed_variants, "logit matrices mix variants or iterations");
}

}  // namespace detail

/// Elementwise mean, summed in ascending model_id order.
inline std::vector<double> aggregate(std::span<const LogitMatrix> logits) {
  if (logits.empty()) throw Error(ErrorKind::empty_ensemble, "nothing to aggregate");
  const auto ordered = detail::by_model_id(logits);
  std::vector<double> sum(ordered.front()->values.size(), 0.0);
  for (const auto* m : ordered) {
    detail::check_compatible(*ordered.front(), *m);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += m->values[i];
  }
  const auto n = static_cast<double>(ordered.size());
  for (auto& v : sum) v /= n;
  return sum;
}

/// Class per row: argmax of the softmax of the row, which is the argmax of
/// the row itself (softmax is monotone). Ties resolve to the lowest class.
inline std::vector<int> predict(std::span<const double> mean_logits) {
  if (mean_logits.size() % kOutputSize != 0) throw Error(ErrorKind::shape_mismatch, "row width must be 10");
  std::vector<int> classes(mean_logits.size() / kOutputSize);
  for (std::size_t i = 0; i < classes.size(); ++i)
    classes[i] = argmax(mean_logits.subspan(i * kOutputSize, kOutputSize));
  return classes;
}

/// Row-wise softmax of averaged logits: the ensemble's output distribution.
inline std::vector<double> ensemble_probabilities(std::span<const double> mean_logits) {
  if (mean_logits.size() % kOutputSize != 0) throw Error(ErrorKind::shape_mismatch, "row width must be 10");
  std::vector<double> probs(mean_logits.size());
  for (std::size_t i = 0; i < mean_logits.size(); i += kOutputSize) {
    Logits row{};
    std::copy_n(mean_logits.begin() + static_cast<std::ptrdiff_t>(i), kOutputSize, row.begin());
    const auto p = softmax(row);
    std::copy(p.begin(), p.end(), probs.begin() + static_cast<std::ptrdiff_t>(i));
  }
  return probs;
}

struct CurvePoint {
  int n = 0;
  double error = 0.0;
  bool operator==(const CurvePoint&) const = default;
};

struct ErrorCurve {
  Variant variant = Variant::plain;
  int iteration = 0;
  std::vector<CurvePoint> points;
  bool operator==(const ErrorCurve&) const = default;
};

/// Streaming form of the cumulative curve: models are added one at a time in
/// ascending model_id order and only the running sum is kept.
class CumulativeCurve {
 public:
  CumulativeCurve(std::vector<std::uint8_t> labels, std::vector<int> grid)
      : labels_(std::move(labels)), grid_(std::move(grid)), sum_(labels_.size() * kOutputSize, 0.0) {
    for (std::size_t i = 0; i < grid_.size(); ++i) {
      if (grid_[i] < 1 || (i > 0 && grid_[i] <= grid_[i - 1]))
        throw Error(ErrorKind::unsorted_indices, "curve grid must be positive and strictly increasing");
    }
  }

  void add(const LogitMatrix& m) {
    if (m.rows() != labels_.size() || m.values.size() % kOutputSize != 0)
      throw Error(ErrorKind::label_count_mismatch, "logit rows " + std::to_string(m.rows()) + " vs " +
                                                       std::to_string(labels_.size()) + " labels");
    if (first_) {
      if (m.variant != first_->variant || m.iteration != first_->iteration)
        throw Error(ErrorKind::mixed_variants, "curve mixes variants or iterations");
      if (m.model_id <= last_id_) throw Error(ErrorKind::unsorted_indices, "models must arrive in ascending id");
    } else {
      first_ = Header{m.variant, m.iteration};
    }
    last_id_ = m.model_id;
    for (std::size_t i = 0; i < sum_.size(); ++i) sum_[i] += m.values[i];
    ++count_;
    if (grid_.empty() || (next_ < grid_.size() && grid_[next_] == count_)) {
      points_.push_back({count_, current_error()});
      if (!grid_.empty()) ++next_;
    }
  }

  int count() const { return count_; }
  double current_error() const { return error_rate(sum_, labels_); }
  std::span<const double> running_sum() const { return sum_; }

  /// Grid points reached so far. An empty grid records every N.
  ErrorCurve curve() const {
    ErrorCurve c;
    if (first_) {
      c.variant = first_->variant;
      c.iteration = first_->iteration;
    }
    c.points = points_;
    return c;
  }

 private:
  struct Header {
    Variant variant;
    int iteration;
  };
  std::vector<std::uint8_t> labels_;
  std::vector<int> grid_;
  std::vector<double> sum_;
  std::vector<CurvePoint> points_;
  std::optional<Header> first_;
  int last_id_ = -1;
  int count_ = 0;
  std::size_t next_ = 0;
};

/// Test error of the summed-logit ensemble at each N in `grid` (every N when
/// the grid is empty). Models are taken in ascending model_id order.
inline ErrorCurve cumulative_error_curve(std::span<const LogitMatrix> logits, std::span<const std::uint8_t> labels,
                                         std::vector<int> grid = {}) {
  if (logits.empty()) throw Error(ErrorKind::empty_ensemble, "no models for the curve");
  if (!grid.empty() && grid.back() > static_cast<int>(logits.size()))
    throw Error(ErrorKind::index_out_of_range, "grid extends past the number of models");
  CumulativeCurve curve({labels.begin(), labels.end()}, std::move(grid));
  for (const auto* m : detail::by_model_id(logits)) curve.add(*m);
  return curve.curve();
}

// "EFLOGIT1", u32 model_id, iteration, variant code, rows; then rows x 10 doubles (all little-endian).
inline constexpr std::string_view kLogitMagic = "EFLOGIT1";

inline Bytes serialize_logits(const LogitMatrix& m) {
  Bytes out;
  out.reserve(24 + m.values.size() * 8);
  append_magic(out, kLogitMagic);
  append_u32_le(out, static_cast<std::uint32_t>(m.model_id));
  append_u32_le(out, static_cast<std::uint32_t>(m.iteration));
  append_u32_le(out, static_cast<std::uint32_t>(m.variant));
  append_u32_le(out, static_cast<std::uint32_t>(m.rows()));
  for (double v : m.values) append_f64_le(out, v);
  return out;
}

inline LogitMatrix deserialize_logits(std::span<const std::uint8_t> bytes) {
  if (!has_magic(bytes, kLogitMagic)) throw Error(ErrorKind::wrong_magic, "not an EFLOGIT1 record");
  if (bytes.size() < 24) throw Error(ErrorKind::truncated_payload, "EFLOGIT1 header too short");
  LogitMatrix m;
  m.model_id = static_cast<int>(read_u32_le(bytes, 8));
  m.iteration = static_cast<int>(read_u32_le(bytes, 12));
  const auto code = read_u32_le(bytes, 16);
  if (code > 2) throw Error(ErrorKind::shape_mismatch, "unknown variant code " + std::to_string(code));
  m.variant = static_cast<Variant>(code);
  const std::size_t rows = read_u32_le(bytes, 20);
  const std::size_t expected = 24 + rows * kOutputSize * 8;
  if (bytes.size() < expected) throw Error(ErrorKind::truncated_payload, "EFLOGIT1 payload too short");
  if (bytes.size() > expected) throw Error(ErrorKind::trailing_bytes, "EFLOGIT1 payload too long");
  m.values.resize(rows * kOutputSize);
  for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = read_f64_le(bytes, 24 + i * 8);
  return m;
}

}  // namespace ensemble_forge
