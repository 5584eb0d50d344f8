#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ensemble_forge/error.hpp"
#include "ensemble_forge/mnist_io.hpp"
#include "ensemble_forge/random.hpp"

namespace ensemble_forge {

/// Representation the mask values are taken in. `zero_mean` copies the
/// normalized training row verbatim; `unit` undoes the mean shift ([0,1]);
/// `raw` additionally rescales to [0,255].
enum class MaskDomain { zero_mean, unit, raw };

inline constexpr std::string_view to_string(MaskDomain d) {
  switch (d) {
    case MaskDomain::zero_mean: return "zero_mean";
    case MaskDomain::unit: return "unit";
    case MaskDomain::raw: return "raw";
  }
  return "zero_mean";
}

struct MaskImage {
  std::vector<double> values;
  std::size_t source_index = 0;
  std::uint64_t seed = 0;

  bool operator==(const MaskImage&) const = default;
};

inline MaskImage select_mask(const Dataset& train, std::uint64_t seed,
                             MaskDomain domain = MaskDomain::zero_mean) {
  if (train.empty()) throw Error(ErrorKind::empty_dataset, "cannot pick a mask from an empty set");
  Engine engine(seed);
  MaskImage mask;
  mask.seed = seed;
  mask.source_index = static_cast<std::size_t>(uniform_below(engine, train.size()));
  const auto row = train.row(mask.source_index);
  mask.values.assign(row.begin(), row.end());
  if (domain != MaskDomain::zero_mean) {
    const double scale = domain == MaskDomain::raw ? 255.0 : 1.0;
    for (auto& v : mask.values) v = (v + train.mean_offset) * scale;
  }
  return mask;
}

/// Hadamard product of every row with the mask. Labels and offset carry through.
inline Dataset apply_mask(const Dataset& data, const MaskImage& mask) {
  if (mask.values.size() != data.features)
    throw Error(ErrorKind::shape_mismatch, "mask length " + std::to_string(mask.values.size()) +
                                               " vs row length " + std::to_string(data.features));
  Dataset out = data;
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto row = out.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = row[j] * mask.values[j];
  }
  return out;
}

/// Row-transforming view equal, row for row and bit for bit, to
/// apply_mask(data, mask) without materializing the product.
class MaskedView {
 public:
  MaskedView(const Dataset& data, const MaskImage& mask) : data_(&data), mask_(&mask) {
    if (mask.values.size() != data.features)
      throw Error(ErrorKind::shape_mismatch, "mask length does not match row length");
  }

  std::size_t size() const { return data_->size(); }
  std::size_t feature_count() const { return data_->features; }
  int label(std::size_t i) const { return data_->labels[i]; }
  std::span<const std::uint8_t> label_span() const { return data_->labels; }
  const double* load_row(std::size_t i, double* scratch) const {
    const auto row = data_->row(i);
    for (std::size_t j = 0; j < row.size(); ++j) scratch[j] = row[j] * mask_->values[j];
    return scratch;
  }

 private:
  const Dataset* data_;
  const MaskImage* mask_;
};

/// FNV-1a over the little-endian bytes of the mask values.
inline std::uint64_t mask_checksum(const MaskImage& mask) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (double v : mask.values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int shift = 0; shift < 64; shift += 8) {
      hash ^= (bits >> shift) & 0xffU;
      hash *= 0x100000001b3ULL;
    }
  }
  return hash;
}

}  // namespace ensemble_forge
