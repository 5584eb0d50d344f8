#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "test_support.hpp"

namespace ef = ensemble_forge;
using ef::ErrorKind;

namespace {

ef::Bytes header(std::uint32_t magic, std::initializer_list<std::uint32_t> dims) {
  ef::Bytes b;
  ef::append_u32_be(b, magic);
  for (auto d : dims) ef::append_u32_be(b, d);
  return b;
}

template <typename Fn>
ErrorKind kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const ef::Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an ef::Error";
  return ErrorKind::io_failure;
}

long double grand_mean(const ef::Dataset& d) {
  long double sum = 0;
  for (double v : d.inputs) sum += v;
  return sum / static_cast<long double>(d.inputs.size());
}

}  // namespace

TEST(ParseIdxImages, HandBuiltBuffer) {
  auto bytes = header(0x00000803, {1, 2, 2});
  bytes.insert(bytes.end(), {0, 128, 255, 7});
  const auto set = ef::parse_idx_images(bytes);
  EXPECT_EQ(set, (ef::RawImageSet{1, 2, 2, {0, 128, 255, 7}}));
}

TEST(ParseIdxImages, Errors) {
  auto wrong = header(0x00000801, {1, 2, 2});
  wrong.insert(wrong.end(), {0, 0, 0, 0});
  EXPECT_EQ(kind_of([&] { ef::parse_idx_images(wrong); }), ErrorKind::wrong_magic);

  auto truncated = header(0x00000803, {2, 2, 2});
  truncated.insert(truncated.end(), {1, 2, 3, 4});
  EXPECT_EQ(kind_of([&] { ef::parse_idx_images(truncated); }), ErrorKind::truncated_payload);

  auto trailing = header(0x00000803, {1, 2, 2});
  trailing.insert(trailing.end(), {1, 2, 3, 4, 5});
  EXPECT_EQ(kind_of([&] { ef::parse_idx_images(trailing); }), ErrorKind::trailing_bytes);

  const ef::Bytes short_header{0, 0, 8, 3, 0};
  EXPECT_EQ(kind_of([&] { ef::parse_idx_images(short_header); }), ErrorKind::truncated_payload);
}

TEST(ParseIdxLabels, HandBuiltAndEmpty) {
  auto bytes = header(0x00000801, {3});
  bytes.insert(bytes.end(), {5, 0, 4});
  EXPECT_EQ(ef::parse_idx_labels(bytes).labels, (std::vector<std::uint8_t>{5, 0, 4}));

  const auto empty = ef::parse_idx_labels(header(0x00000801, {0}));
  EXPECT_EQ(empty.count(), 0u);
}

TEST(ParseIdxLabels, Errors) {
  auto out_of_range = header(0x00000801, {2});
  out_of_range.insert(out_of_range.end(), {3, 12});
  EXPECT_EQ(kind_of([&] { ef::parse_idx_labels(out_of_range); }), ErrorKind::label_out_of_range);

  auto wrong = header(0x00000803, {1});
  wrong.push_back(1);
  EXPECT_EQ(kind_of([&] { ef::parse_idx_labels(wrong); }), ErrorKind::wrong_magic);

  auto truncated = header(0x00000801, {4});
  truncated.insert(truncated.end(), {1, 2});
  EXPECT_EQ(kind_of([&] { ef::parse_idx_labels(truncated); }), ErrorKind::truncated_payload);

  auto trailing = header(0x00000801, {1});
  trailing.insert(trailing.end(), {1, 2});
  EXPECT_EQ(kind_of([&] { ef::parse_idx_labels(trailing); }), ErrorKind::trailing_bytes);
}

// Round-trip over randomly shaped sets, including empty ones.
TEST(IdxRoundTrip, RandomShapes) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t count = rng() % 6, rows = 1 + rng() % 5, cols = 1 + rng() % 5;
    const auto images = ef_test::random_raw_images(count, rows, cols, rng());
    EXPECT_EQ(ef::parse_idx_images(ef::serialize_idx_images(images)), images);

    ef::LabelSet labels;
    for (std::size_t i = 0; i < count; ++i) labels.labels.push_back(static_cast<std::uint8_t>(rng() % 10));
    EXPECT_EQ(ef::parse_idx_labels(ef::serialize_idx_labels(labels)), labels);
  }
}

TEST(IdxFiles, GzipAndPlainLoadIdentically) {
  const auto dir = std::filesystem::temp_directory_path() / "ef_mnist_io_gz";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir / "plain");
  std::filesystem::create_directories(dir / "gz");

  const auto images = ef_test::random_raw_images(20, 28, 28, 3);
  const auto labels = ef_test::cycling_labels(20);
  const auto image_bytes = ef::serialize_idx_images(images);
  const auto label_bytes = ef::serialize_idx_labels(labels);
  ef::write_file(dir / "plain" / "train-images-idx3-ubyte", image_bytes);
  ef::write_file(dir / "plain" / "train-labels-idx1-ubyte", label_bytes);

  auto gzip_to = [](const std::filesystem::path& path, const ef::Bytes& bytes) {
    gzFile f = gzopen(path.c_str(), "wb");
    ASSERT_NE(f, nullptr);
    ASSERT_EQ(gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size())), static_cast<int>(bytes.size()));
    gzclose(f);
  };
  gzip_to(dir / "gz" / "train-images-idx3-ubyte.gz", image_bytes);
  gzip_to(dir / "gz" / "train-labels-idx1-ubyte.gz", label_bytes);

  const auto plain = ef::load_mnist_split(dir / "plain", "train");
  const auto gz = ef::load_mnist_split(dir / "gz", "train");
  EXPECT_EQ(plain.images, images);
  EXPECT_EQ(gz.images, images);
  EXPECT_EQ(gz.labels, labels);
  EXPECT_EQ(kind_of([&] { ef::load_mnist_split(dir / "plain", "t10k"); }), ErrorKind::io_failure);
  std::filesystem::remove_all(dir);
}

TEST(Normalize, AllSaturatedImagesHaveZeroMean) {
  ef::RawImageSet raw{2, 2, 2, std::vector<std::uint8_t>(8, 255)};
  const auto d = ef::normalize(raw, ef_test::cycling_labels(2));
  EXPECT_DOUBLE_EQ(d.mean_offset, 1.0);
  for (double v : d.inputs) EXPECT_EQ(v, 1.0 - d.mean_offset);
  EXPECT_NEAR(static_cast<double>(grand_mean(d)), 0.0, 1e-9);
}

TEST(Normalize, ZeroImageUnderGivenOffset) {
  ef::RawImageSet raw{1, 2, 2, {0, 0, 0, 0}};
  const auto d = ef::normalize(raw, ef_test::cycling_labels(1), 0.25);
  for (double v : d.inputs) EXPECT_EQ(v, -0.25);
  EXPECT_EQ(d.mean_offset, 0.25);
}

TEST(Normalize, CountMismatch) {
  ef::RawImageSet raw{2, 2, 2, std::vector<std::uint8_t>(8, 1)};
  EXPECT_EQ(kind_of([&] { ef::normalize(raw, ef_test::cycling_labels(3)); }), ErrorKind::count_mismatch);
}

TEST(Normalize, TrainingGrandMeanIsZero) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto d = ef::normalize(ef_test::random_raw_images(50, 28, 28, seed), ef_test::cycling_labels(50));
    EXPECT_NEAR(static_cast<double>(grand_mean(d)), 0.0, 1e-9);
  }
}

// normalize(a) + normalize(b) == normalize(a + b) + offset, pixelwise, for a shared offset.
TEST(Normalize, IsAffine) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    ef::RawImageSet a{1, 2, 2, {}}, b{1, 2, 2, {}}, sum{1, 2, 2, {}};
    for (int j = 0; j < 4; ++j) {
      const auto pa = static_cast<std::uint8_t>(rng() % 128), pb = static_cast<std::uint8_t>(rng() % 128);
      a.pixels.push_back(pa);
      b.pixels.push_back(pb);
      sum.pixels.push_back(static_cast<std::uint8_t>(pa + pb));
    }
    const double offset = static_cast<double>(rng() % 1000) / 1000.0;
    const auto labels = ef_test::cycling_labels(1);
    const auto na = ef::normalize(a, labels, offset), nb = ef::normalize(b, labels, offset),
               ns = ef::normalize(sum, labels, offset);
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(na.inputs[j] + nb.inputs[j], ns.inputs[j] - offset, 1e-12);
  }
}

TEST(Subset, FullSizeIsAPermutation) {
  const auto d = ef_test::synthetic_dataset(37, 1);
  const auto s = ef::subset(d, d.size(), 99);
  ASSERT_EQ(s.size(), d.size());
  std::multiset<std::vector<double>> original, chosen;
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto r = d.row(i);
    original.emplace(r.begin(), r.end());
    auto q = s.row(i);
    chosen.emplace(q.begin(), q.end());
  }
  EXPECT_EQ(original, chosen);
  EXPECT_EQ(s.mean_offset, d.mean_offset);
}

TEST(Subset, DeterministicForSeed) {
  const auto d = ef_test::synthetic_dataset(200, 2);
  EXPECT_EQ(ef::subset(d, 10, 5), ef::subset(d, 10, 5));
  EXPECT_NE(ef::subset(d, 10, 5), ef::subset(d, 10, 6));
}

TEST(Subset, CountTooLarge) {
  const auto d = ef_test::synthetic_dataset(5, 2);
  EXPECT_EQ(kind_of([&] { ef::subset(d, 6, 0); }), ErrorKind::count_too_large);
}

TEST(Subset, StratifiesUnevenClasses) {
  // Class populations 1, 50, 50, ... : class 0 is exhausted, the rest share evenly.
  ef::Dataset d;
  d.features = 1;
  for (int c = 0; c < 10; ++c)
    for (int k = 0; k < (c == 0 ? 1 : 50); ++k) {
      d.labels.push_back(static_cast<std::uint8_t>(c));
      d.inputs.push_back(c);
    }
  const auto s = ef::subset(d, 100, 4);
  std::array<int, 10> counts{};
  for (auto l : s.labels) ++counts[l];
  EXPECT_EQ(counts[0], 1);
  int lo = 100, hi = 0;
  for (int c = 1; c < 10; ++c) {
    lo = std::min(lo, counts[c]);
    hi = std::max(hi, counts[c]);
  }
  EXPECT_LE(hi - lo, 1);
}

TEST(MnistFiles, FullTrainingSetShape) {
  EF_REQUIRE_MNIST();
  const auto& m = ef_test::mnist();
  EXPECT_EQ(m.train.size(), 60000u);
  EXPECT_EQ(m.test.size(), 10000u);
  EXPECT_EQ(m.train.features, 784u);
  EXPECT_EQ(m.test.mean_offset, m.train.mean_offset);
  EXPECT_NEAR(static_cast<double>(grand_mean(m.train)), 0.0, 1e-9);
}

TEST(MnistFiles, ThousandSubsetHasHundredPerClass) {
  EF_REQUIRE_MNIST();
  const auto s = ef::subset(ef_test::mnist().train, 1000, 2024);
  std::array<int, 10> counts{};
  for (auto l : s.labels) ++counts[l];
  for (int c = 0; c < 10; ++c) EXPECT_EQ(counts[c], 100) << "class " << c;
}
