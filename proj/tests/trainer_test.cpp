#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "test_support.hpp"

namespace ef = ensemble_forge;
using ef::ErrorKind;

namespace {

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

ef::TrainConfig config(int sweeps, double lr = 0.1) {
  ef::TrainConfig cfg;
  cfg.init_seed = 101;
  cfg.shuffle_seed = 202;
  cfg.sweeps = sweeps;
  cfg.learning_rate = lr;
  return cfg;
}

// Four items, item i has a single bright pixel at position i; a hand-wired
// network routes pixel i to hidden unit i and hidden unit i to class i.
std::pair<ef::ModelParams, ef::Dataset> routed_fixture() {
  ef::ModelParams p;
  for (std::size_t i = 0; i < 4; ++i) {
    p.w1()[i * 784 + i] = 10.0;
    p.b1()[i] = -5.0;
    p.w2()[i * 100 + i] = 10.0;
  }
  ef::Dataset d;
  d.features = 784;
  d.inputs.assign(4 * 784, 0.0);
  for (std::size_t i = 0; i < 4; ++i) {
    d.inputs[i * 784 + i] = 1.0;
    d.labels.push_back(static_cast<std::uint8_t>(i));
  }
  return {p, d};
}

}  // namespace

TEST(SweepOrder, IsAPermutationThatChangesEverySweep) {
  for (std::size_t n : {1u, 2u, 17u, 1000u}) {
    auto order = ef::sweep_order(5, 1, n);
    std::vector<int> visits(n, 0);
    for (auto i : order) ++visits.at(i);
    EXPECT_TRUE(std::all_of(visits.begin(), visits.end(), [](int v) { return v == 1; }));
  }
  EXPECT_NE(ef::sweep_order(5, 1, 100), ef::sweep_order(5, 2, 100));
  EXPECT_EQ(ef::sweep_order(5, 3, 100), ef::sweep_order(5, 3, 100));
}

TEST(TrainLocalModel, SingleExampleIsOneStep) {
  const auto d = ef_test::synthetic_dataset(1, 1);
  const auto cfg = config(1);
  const auto report = ef::train_local_model(d, cfg);
  const auto init = ef::init_params(cfg.init_seed, cfg.init_scale);
  EXPECT_EQ(report.params, ef::sgd_step(init, ef::backward(init, d.row(0), d.labels[0]), cfg.learning_rate));
  ASSERT_EQ(report.per_sweep_train_loss.size(), 1u);
  EXPECT_EQ(report.per_sweep_train_loss[0], ef::loss(ef::forward(init, d.row(0)).probs, d.labels[0]));
}

// Unrolled reference: every sweep visits sweep_order exactly once via backward + sgd_step.
TEST(TrainLocalModel, MatchesUnrolledReference) {
  const auto d = ef_test::synthetic_dataset(12, 2);
  const auto cfg = config(3, 0.05);
  auto params = ef::init_params(cfg.init_seed, cfg.init_scale);
  for (int sweep = 1; sweep <= cfg.sweeps; ++sweep)
    for (auto i : ef::sweep_order(cfg.shuffle_seed, sweep, d.size()))
      params = ef::sgd_step(params, ef::backward(params, d.row(i), d.labels[i]), cfg.learning_rate);
  const auto report = ef::train_local_model(d, cfg);
  EXPECT_EQ(report.params, params);
  EXPECT_EQ(report.per_sweep_train_loss.size(), 3u);
}

TEST(TrainLocalModel, Deterministic) {
  const auto d = ef_test::synthetic_dataset(40, 3);
  const auto cfg = ef::checkpoint_sweeps(config(2), {1, 2});
  EXPECT_EQ(ef::train_local_model(d, cfg), ef::train_local_model(d, cfg));
}

TEST(TrainLocalModel, Errors) {
  EXPECT_EQ(kind_of([] { ef::train_local_model(ef::Dataset{784, {}, {}, 0.0}, config(1)); }),
            ErrorKind::empty_dataset);
  const auto d = ef_test::synthetic_dataset(3, 1);
  EXPECT_EQ(kind_of([&] { ef::train_local_model(d, config(1, 0.0)); }), ErrorKind::non_positive_learning_rate);
  EXPECT_EQ(kind_of([&] { ef::train_local_model(d, config(0)); }), ErrorKind::config_invalid);
  auto narrow = ef::normalize(ef_test::random_raw_images(3, 2, 2, 1), ef_test::cycling_labels(3));
  EXPECT_EQ(kind_of([&] { ef::train_local_model(narrow, config(1)); }), ErrorKind::shape_mismatch);
}

TEST(CheckpointSweeps, CountsAndValidation) {
  const auto d = ef_test::synthetic_dataset(10, 4);
  const auto report = ef::train_local_model(d, ef::checkpoint_sweeps(config(6), {1, 6}));
  ASSERT_EQ(report.checkpoints.size(), 2u);
  EXPECT_EQ(report.checkpoints[0].sweep, 1);
  EXPECT_EQ(report.checkpoints[1].params, report.params);
  EXPECT_TRUE(ef::train_local_model(d, ef::checkpoint_sweeps(config(2), {})).checkpoints.empty());

  EXPECT_EQ(kind_of([] { ef::checkpoint_sweeps(config(6), {7}); }), ErrorKind::index_out_of_range);
  EXPECT_EQ(kind_of([] { ef::checkpoint_sweeps(config(6), {0, 2}); }), ErrorKind::index_out_of_range);
  EXPECT_EQ(kind_of([] { ef::checkpoint_sweeps(config(6), {3, 2}); }), ErrorKind::unsorted_indices);
}

// The model after sweep k of a longer run is the model of a run with sweeps = k.
TEST(CheckpointSweeps, PrefixDeterminism) {
  const auto d = ef_test::synthetic_dataset(30, 5);
  const auto long_run = ef::train_local_model(d, ef::checkpoint_sweeps(config(4), {1, 2, 3}));
  for (const auto& checkpoint : long_run.checkpoints) {
    const auto fresh = ef::train_local_model(d, config(checkpoint.sweep));
    EXPECT_EQ(ef::serialize_params(fresh.params), ef::serialize_params(checkpoint.params));
  }
}

TEST(Evaluate, CountsErrors) {
  auto [params, data] = routed_fixture();
  EXPECT_EQ(ef::evaluate(params, data), 0.0);
  data.labels[2] = 7;
  EXPECT_EQ(ef::evaluate(params, data), 0.25);
  EXPECT_EQ(kind_of([&] { ef::evaluate(params, ef::Dataset{784, {}, {}, 0.0}); }), ErrorKind::empty_dataset);
}

TEST(Evaluate, PermutationInvariant) {
  const auto d = ef_test::synthetic_dataset(60, 6);
  const auto params = ef::init_params(6, 0.3);
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0u);
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(order.begin(), order.end(), rng);
    EXPECT_EQ(ef::evaluate(params, ef::select_rows(d, order)), ef::evaluate(params, d));
  }
}

TEST(Evaluate, LogitsMatchForward) {
  const auto d = ef_test::synthetic_dataset(5, 7);
  const auto params = ef::init_params(7, 0.2);
  const auto logits = ef::compute_logits(params, d);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto trace = ef::forward(params, d.row(i));
    for (std::size_t k = 0; k < 10; ++k) EXPECT_EQ(logits[i * 10 + k], trace.logits[k]);
  }
}

TEST(MnistTraining, FreshModelIsNearChance) {
  EF_REQUIRE_MNIST();
  const auto test = ef::subset(ef_test::mnist().test, 2000, 1);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const double error = ef::evaluate(ef::init_params(seed), test);
    EXPECT_GE(error, 0.80);
    EXPECT_LE(error, 0.98);
  }
}

TEST(MnistTraining, SweepLossDecreases) {
  EF_REQUIRE_MNIST();
  const auto train = ef::subset(ef_test::mnist().train, 1000, 3);
  const auto report = ef::train_local_model(train, config(5, 0.1));
  for (std::size_t k = 1; k < report.per_sweep_train_loss.size(); ++k)
    EXPECT_LE(report.per_sweep_train_loss[k], report.per_sweep_train_loss[k - 1] + 1e-6) << "sweep " << k + 1;
  EXPECT_LT(report.per_sweep_train_loss.back(), report.per_sweep_train_loss.front());
}

TEST(MnistTraining, MemorizesFiftyExamples) {
  EF_REQUIRE_MNIST();
  const auto train = ef::subset(ef_test::mnist().train, 50, 4);
  const auto report = ef::train_local_model(train, config(200, 0.1));
  EXPECT_EQ(ef::evaluate(report.params, train), 0.0);
}
