#pragma once

#include <algorithm>
#include <array>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ensemble_forge/byte_io.hpp"
#include "ensemble_forge/error.hpp"
#include "ensemble_forge/random.hpp"

namespace ensemble_forge {

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
inline constexpr int kClassCount = 10;

struct RawImageSet {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols, row-major per image

  std::size_t image_size() const { return rows * cols; }
  bool operator==(const RawImageSet&) const = default;
};

struct LabelSet {
  std::vector<std::uint8_t> labels;

  std::size_t count() const { return labels.size(); }
  bool operator==(const LabelSet&) const = default;
};

// Normalized examples. `inputs` is row-major, `features` values per row
// (784 for MNIST, smaller for synthetic fixtures).
struct Dataset {
  std::size_t features = 0;
  std::vector<double> inputs;
  std::vector<std::uint8_t> labels;
  double mean_offset = 0.0;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }

  std::span<const double> row(std::size_t i) const {
    return {inputs.data() + i * features, features};
  }
  std::span<double> row(std::size_t i) { return {inputs.data() + i * features, features}; }

  // Example-source interface shared with transformed views (see bootstrap.hpp).
  std::size_t feature_count() const { return features; }
  int label(std::size_t i) const { return labels[i]; }
  std::span<const std::uint8_t> label_span() const { return labels; }
  const double* load_row(std::size_t i, double* /*scratch*/) const { return inputs.data() + i * features; }

  bool operator==(const Dataset&) const = default;
};

/// Anything training and evaluation can stream rows from. `load_row` returns a
/// pointer to the row, either into the source itself or into `scratch`
/// (which has room for feature_count() values).
template <typename S>
concept ExampleSource = requires(const S& s, std::size_t i, double* scratch) {
  { s.size() } -> std::convertible_to<std::size_t>;
  { s.feature_count() } -> std::convertible_to<std::size_t>;
  { s.label(i) } -> std::convertible_to<int>;
  { s.label_span() } -> std::convertible_to<std::span<const std::uint8_t>>;
  { s.load_row(i, scratch) } -> std::same_as<const double*>;
};

inline RawImageSet parse_idx_images(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw Error(ErrorKind::truncated_payload, "IDX image header shorter than 16 bytes");
  if (const auto magic = read_u32_be(bytes, 0); magic != kIdxImageMagic)
    throw Error(ErrorKind::wrong_magic, "expected image magic 0x00000803, got " + std::to_string(magic));

  RawImageSet set;
  set.count = read_u32_be(bytes, 4);
  set.rows = read_u32_be(bytes, 8);
  set.cols = read_u32_be(bytes, 12);
  const std::size_t payload = set.count * set.rows * set.cols;
  const std::size_t available = bytes.size() - 16;
  if (available < payload)
    throw Error(ErrorKind::truncated_payload, "declared " + std::to_string(payload) +
                                                  " pixel bytes, found " + std::to_string(available));
  if (available > payload)
    throw Error(ErrorKind::trailing_bytes, std::to_string(available - payload) + " bytes after image payload");
  set.pixels.assign(bytes.begin() + 16, bytes.end());
  return set;
}

inline LabelSet parse_idx_labels(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw Error(ErrorKind::truncated_payload, "IDX label header shorter than 8 bytes");
  if (const auto magic = read_u32_be(bytes, 0); magic != kIdxLabelMagic)
    throw Error(ErrorKind::wrong_magic, "expected label magic 0x00000801, got " + std::to_string(magic));

  const std::size_t count = read_u32_be(bytes, 4);
  const std::size_t available = bytes.size() - 8;
  if (available < count)
    throw Error(ErrorKind::truncated_payload, "declared " + std::to_string(count) + " labels, found " +
                                                  std::to_string(available));
  if (available > count)
    throw Error(ErrorKind::trailing_bytes, std::to_string(available - count) + " bytes after label payload");

  LabelSet set;
  set.labels.assign(bytes.begin() + 8, bytes.end());
  for (std::size_t i = 0; i < set.labels.size(); ++i) {
    if (set.labels[i] >= kClassCount)
      throw Error(ErrorKind::label_out_of_range,
                  "label " + std::to_string(set.labels[i]) + " at index " + std::to_string(i));
  }
  return set;
}

inline Bytes serialize_idx_images(const RawImageSet& set) {
  Bytes out;
  out.reserve(16 + set.pixels.size());
  append_u32_be(out, kIdxImageMagic);
  append_u32_be(out, static_cast<std::uint32_t>(set.count));
  append_u32_be(out, static_cast<std::uint32_t>(set.rows));
  append_u32_be(out, static_cast<std::uint32_t>(set.cols));
  out.insert(out.end(), set.pixels.begin(), set.pixels.end());
  return out;
}

inline Bytes serialize_idx_labels(const LabelSet& set) {
  Bytes out;
  out.reserve(8 + set.labels.size());
  append_u32_be(out, kIdxLabelMagic);
  append_u32_be(out, static_cast<std::uint32_t>(set.labels.size()));
  out.insert(out.end(), set.labels.begin(), set.labels.end());
  return out;
}

/// Scales bytes to [0,1] and subtracts one global scalar. With no offset given,
/// the offset is the grand mean of this set (training mode); the test split
/// passes the training offset back in.
inline Dataset normalize(const RawImageSet& images, const LabelSet& labels,
                         std::optional<double> mean_offset = std::nullopt) {
  if (images.count != labels.count())
    throw Error(ErrorKind::count_mismatch, std::to_string(images.count) + " images vs " +
                                               std::to_string(labels.count()) + " labels");
  if (images.pixels.size() != images.count * images.image_size())
    throw Error(ErrorKind::truncated_payload, "pixel buffer does not match count x rows x cols");

  double offset = 0.0;
  if (mean_offset) {
    offset = *mean_offset;
  } else if (!images.pixels.empty()) {
    // Integer accumulation keeps the mean exact up to the final division.
    std::uint64_t total = 0;
    for (auto p : images.pixels) total += p;
    offset = static_cast<double>(total) / (255.0 * static_cast<double>(images.pixels.size()));
  }

  Dataset data;
  data.features = images.image_size();
  data.mean_offset = offset;
  data.labels = labels.labels;
  data.inputs.resize(images.pixels.size());
  for (std::size_t i = 0; i < images.pixels.size(); ++i)
    data.inputs[i] = static_cast<double>(images.pixels[i]) / 255.0 - offset;
  return data;
}

inline Dataset select_rows(const Dataset& data, std::span<const std::size_t> indices) {
  Dataset out;
  out.features = data.features;
  out.mean_offset = data.mean_offset;
  out.inputs.reserve(indices.size() * data.features);
  out.labels.reserve(indices.size());
  for (auto i : indices) {
    const auto r = data.row(i);
    out.inputs.insert(out.inputs.end(), r.begin(), r.end());
    out.labels.push_back(data.labels[i]);
  }
  return out;
}

/// Indices chosen by `subset`, in output order. Per-class quotas are as equal as
/// the class populations allow (water-filling); within a class the members are
/// a seeded random sample, and the final order is a seeded shuffle.
inline std::vector<std::size_t> subset_indices(std::span<const std::uint8_t> labels, std::size_t count,
                                               std::uint64_t seed) {
  if (count > labels.size())
    throw Error(ErrorKind::count_too_large,
                "requested " + std::to_string(count) + " of " + std::to_string(labels.size()) + " rows");

  Engine engine(seed);
  std::array<std::vector<std::size_t>, kClassCount> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  for (auto& members : by_class) shuffle_in_place(members, engine);

  std::array<std::size_t, kClassCount> quota{};
  std::size_t remaining = count;
  while (remaining > 0) {
    std::size_t open = 0;
    for (int c = 0; c < kClassCount; ++c) open += quota[c] < by_class[c].size();
    const std::size_t share = std::max<std::size_t>(1, remaining / open);
    for (int c = 0; c < kClassCount && remaining > 0; ++c) {
      const std::size_t take = std::min({share, by_class[c].size() - quota[c], remaining});
      quota[c] += take;
      remaining -= take;
    }
  }

  std::vector<std::size_t> chosen;
  chosen.reserve(count);
  for (int c = 0; c < kClassCount; ++c)
    chosen.insert(chosen.end(), by_class[c].begin(), by_class[c].begin() + static_cast<std::ptrdiff_t>(quota[c]));
  shuffle_in_place(chosen, engine);
  return chosen;
}

inline Dataset subset(const Dataset& data, std::size_t count, std::uint64_t seed) {
  const auto indices = subset_indices(data.labels, count, seed);
  return select_rows(data, indices);
}

// On-disk MNIST layout.
struct MnistSplit {
  RawImageSet images;
  LabelSet labels;
};

inline std::filesystem::path find_idx_file(const std::filesystem::path& dir, const std::string& name) {
  for (const auto& candidate : {dir / name, dir / (name + ".gz")}) {
    if (std::filesystem::is_regular_file(candidate)) return candidate;
  }
  throw Error(ErrorKind::io_failure, "missing " + name + "[.gz] in " + dir.string());
}

/// `prefix` is "train" or "t10k".
inline MnistSplit load_mnist_split(const std::filesystem::path& dir, const std::string& prefix) {
  MnistSplit split;
  split.images = parse_idx_images(read_maybe_gzip(find_idx_file(dir, prefix + "-images-idx3-ubyte")));
  split.labels = parse_idx_labels(read_maybe_gzip(find_idx_file(dir, prefix + "-labels-idx1-ubyte")));
  if (split.images.count != split.labels.count())
    throw Error(ErrorKind::count_mismatch, prefix + " images and labels disagree on count");
  return split;
}

struct NormalizedMnist {
  Dataset train;
  Dataset test;
};

inline NormalizedMnist load_mnist(const std::filesystem::path& dir) {
  const auto train = load_mnist_split(dir, "train");
  const auto test = load_mnist_split(dir, "t10k");
  NormalizedMnist out;
  out.train = normalize(train.images, train.labels);
  out.test = normalize(test.images, test.labels, out.train.mean_offset);
  return out;
}

}  // namespace ensemble_forge
