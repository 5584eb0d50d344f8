#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ensemble_forge/error.hpp"
#include "ensemble_forge/mnist_io.hpp"
#include "ensemble_forge/nnet.hpp"
#include "ensemble_forge/random.hpp"

namespace ensemble_forge {

inline constexpr double kDefaultLearningRate = 0.1;

struct TrainConfig {
  std::uint64_t init_seed = 0;
  std::uint64_t shuffle_seed = 0;
  double learning_rate = kDefaultLearningRate;
  int sweeps = 1;
  double init_scale = kDefaultInitScale;
  Activation activation = Activation::logistic;
  // Sweep counts (1-based, strictly ascending) after which a snapshot is kept.
  std::vector<int> checkpoints;

  void validate() const {
    if (!(learning_rate > 0.0)) throw Error(ErrorKind::non_positive_learning_rate, "learning_rate must be > 0");
    if (!(init_scale > 0.0)) throw Error(ErrorKind::non_positive_scale, "init_scale must be > 0");
    if (sweeps < 1) throw Error(ErrorKind::config_invalid, "sweeps must be >= 1");
    for (std::size_t i = 1; i < checkpoints.size(); ++i)
      if (checkpoints[i] <= checkpoints[i - 1])
        throw Error(ErrorKind::unsorted_indices, "checkpoints must be strictly ascending");
    for (int c : checkpoints)
      if (c < 1 || c > sweeps)
        throw Error(ErrorKind::index_out_of_range,
                    "checkpoint " + std::to_string(c) + " outside [1, " + std::to_string(sweeps) + "]");
  }
};

struct Checkpoint {
  int sweep = 0;
  ModelParams params;

  bool operator==(const Checkpoint&) const = default;
};

struct TrainReport {
  ModelParams params;
  std::vector<double> per_sweep_train_loss;  // mean pre-update loss over each sweep
  std::vector<Checkpoint> checkpoints;

  bool operator==(const TrainReport&) const = default;
};

/// Returns `cfg` with snapshots requested after each sweep in `at`.
inline TrainConfig checkpoint_sweeps(TrainConfig cfg, std::vector<int> at) {
  cfg.checkpoints = std::move(at);
  cfg.validate();
  return cfg;
}

/// Visit order for one sweep: a permutation of [0, n) keyed by (shuffle_seed, sweep).
inline std::vector<std::size_t> sweep_order(std::uint64_t shuffle_seed, int sweep, std::size_t n) {
  Engine engine(keyed_hash(shuffle_seed, seed_tag::sweep, static_cast<std::uint64_t>(sweep)));
  return random_permutation(n, engine);
}

/// Per-example SGD for cfg.sweeps full passes, reshuffling every pass.
template <ExampleSource Source>
TrainReport train_local_model(const Source& data, const TrainConfig& cfg) {
  if (data.size() == 0) throw Error(ErrorKind::empty_dataset, "training set is empty");
  if (data.feature_count() != kInputSize)
    throw Error(ErrorKind::shape_mismatch, "training rows must have 784 features");
  cfg.validate();
  std::vector<double> scratch(kInputSize);

  TrainReport report;
  report.params = init_params(cfg.init_seed, cfg.init_scale);
  report.per_sweep_train_loss.reserve(static_cast<std::size_t>(cfg.sweeps));
  auto next_checkpoint = cfg.checkpoints.begin();

  for (int sweep = 1; sweep <= cfg.sweeps; ++sweep) {
    const auto order = sweep_order(cfg.shuffle_seed, sweep, data.size());
    double total_loss = 0.0;
    for (auto i : order)
      total_loss += detail::sgd_update_in_place(report.params, data.load_row(i, scratch.data()), data.label(i),
                                                cfg.learning_rate, cfg.activation);
    report.per_sweep_train_loss.push_back(total_loss / static_cast<double>(data.size()));

    if (next_checkpoint != cfg.checkpoints.end() && *next_checkpoint == sweep) {
      report.checkpoints.push_back({sweep, report.params});
      ++next_checkpoint;
    }
  }
  return report;
}

/// Pre-softmax outputs for every row, row-major rows x 10.
template <ExampleSource Source>
std::vector<double> compute_logits(const ModelParams& params, const Source& data,
                                   Activation act = Activation::logistic) {
  if (data.feature_count() != kInputSize) throw Error(ErrorKind::shape_mismatch, "rows must have 784 features");
  std::vector<double> out(data.size() * kOutputSize);
  std::vector<double> scratch(kInputSize);
  std::array<double, kHiddenSize> hidden{};
  for (std::size_t i = 0; i < data.size(); ++i) {
    detail::hidden_layer(params, data.load_row(i, scratch.data()), act, hidden.data());
    detail::output_layer(params, hidden.data(), out.data() + i * kOutputSize);
  }
  return out;
}

/// Fraction of rows whose argmax (over `width` columns) differs from the label.
inline double error_rate(std::span<const double> scores, std::span<const std::uint8_t> labels,
                         std::size_t width = kOutputSize) {
  if (labels.empty()) throw Error(ErrorKind::empty_dataset, "no rows to score");
  if (scores.size() != labels.size() * width)
    throw Error(ErrorKind::label_count_mismatch, "score rows do not match label count");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    wrong += argmax(scores.subspan(i * width, width)) != labels[i];
  return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

template <ExampleSource Source>
double evaluate(const ModelParams& params, const Source& data, Activation act = Activation::logistic) {
  if (data.size() == 0) throw Error(ErrorKind::empty_dataset, "evaluation set is empty");
  return error_rate(compute_logits(params, data, act), data.label_span());
}

}  // namespace ensemble_forge
