#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ensemble_forge/byte_io.hpp"
#include "ensemble_forge/error.hpp"
#include "ensemble_forge/random.hpp"

namespace ensemble_forge {

inline constexpr std::size_t kInputSize = 784;
inline constexpr std::size_t kHiddenSize = 100;
inline constexpr std::size_t kOutputSize = 10;

using Logits = std::array<double, kOutputSize>;
using Probabilities = std::array<double, kOutputSize>;

/// Hidden-unit nonlinearity. Both act on the biased pre-activation W*x + b.
enum class Activation { logistic, tanh };

inline constexpr std::string_view to_string(Activation a) {
  return a == Activation::logistic ? "logistic" : "tanh";
}

/// Weights and biases of the 784-100-10 network, row-major (row = output unit).
/// The tag distinguishes parameters from gradients while sharing the layout.
template <typename Tag>
class LayerTensors {
 public:
  static constexpr std::size_t kW1Size = kHiddenSize * kInputSize;
  static constexpr std::size_t kW2Size = kOutputSize * kHiddenSize;
  static constexpr std::size_t kTotalSize = kW1Size + kHiddenSize + kW2Size + kOutputSize;

  LayerTensors() : w1_(kW1Size, 0.0), b1_(kHiddenSize, 0.0), w2_(kW2Size, 0.0), b2_(kOutputSize, 0.0) {}

  LayerTensors(std::vector<double> w1, std::vector<double> b1, std::vector<double> w2, std::vector<double> b2)
      : w1_(std::move(w1)), b1_(std::move(b1)), w2_(std::move(w2)), b2_(std::move(b2)) {
    if (w1_.size() != kW1Size || b1_.size() != kHiddenSize || w2_.size() != kW2Size ||
        b2_.size() != kOutputSize)
      throw Error(ErrorKind::shape_mismatch, "parameter shapes must be 100x784, 100, 10x100, 10");
  }

  std::span<double> w1() { return w1_; }
  std::span<double> b1() { return b1_; }
  std::span<double> w2() { return w2_; }
  std::span<double> b2() { return b2_; }
  std::span<const double> w1() const { return w1_; }
  std::span<const double> b1() const { return b1_; }
  std::span<const double> w2() const { return w2_; }
  std::span<const double> b2() const { return b2_; }

  std::span<const double> w1_row(std::size_t unit) const { return w1().subspan(unit * kInputSize, kInputSize); }
  std::span<const double> w2_row(std::size_t unit) const { return w2().subspan(unit * kHiddenSize, kHiddenSize); }

  /// Flat view in serialization order (W1, b1, W2, b2).
  template <typename Fn>
  void for_each_block(Fn&& fn) {
    fn(w1()); fn(b1()); fn(w2()); fn(b2());
  }
  template <typename Fn>
  void for_each_block(Fn&& fn) const {
    fn(w1()); fn(b1()); fn(w2()); fn(b2());
  }

  /// Coordinate access across all four blocks, serialization order.
  double& at(std::size_t flat) { return const_cast<double&>(std::as_const(*this).at(flat)); }
  const double& at(std::size_t flat) const {
    if (flat < kW1Size) return w1_[flat];
    flat -= kW1Size;
    if (flat < kHiddenSize) return b1_[flat];
    flat -= kHiddenSize;
    if (flat < kW2Size) return w2_[flat];
    flat -= kW2Size;
    if (flat < kOutputSize) return b2_[flat];
    throw Error(ErrorKind::index_out_of_range, "flat parameter index past end");
  }

  bool all_finite() const {
    bool ok = true;
    for_each_block([&](std::span<const double> block) {
      ok = ok && std::all_of(block.begin(), block.end(), [](double v) { return std::isfinite(v); });
    });
    return ok;
  }

  bool operator==(const LayerTensors&) const = default;

 private:
  std::vector<double> w1_, b1_, w2_, b2_;
};

using ModelParams = LayerTensors<struct ParamsTag>;
using Gradients = LayerTensors<struct GradientsTag>;

struct ForwardTrace {
  std::array<double, kHiddenSize> hidden{};
  Logits logits{};
  Probabilities probs{};
};

inline constexpr double kDefaultInitScale = 0.05;

/// Uniform [-scale, scale] weights from a seeded stream, zero biases.
inline ModelParams init_params(std::uint64_t seed, double scale = kDefaultInitScale) {
  if (!(scale > 0.0)) throw Error(ErrorKind::non_positive_scale, "init scale must be > 0");
  Engine engine(seed);
  ModelParams params;
  auto fill = [&](std::span<double> block) {
    for (auto& w : block) w = scale * (2.0 * uniform_unit(engine) - 1.0);
  };
  fill(params.w1());
  fill(params.w2());
  return params;
}

inline double activation(double x, Activation kind = Activation::logistic) {
  if (kind == Activation::tanh) return std::tanh(x);
  return 1.0 / (1.0 + std::exp(-x));
}

/// Derivative expressed through the activation output y = f(x).
inline double activation_slope(double y, Activation kind = Activation::logistic) {
  if (kind == Activation::tanh) return 1.0 - y * y;
  return y * (1.0 - y);
}

namespace detail {

// Four interleaved partial sums, combined pairwise. The association order is
// fixed by the source, so results do not depend on how the compiler vectorizes.
inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  const std::size_t blocked = n - n % 4;
  std::size_t i = 0;
  for (; i < blocked; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

inline void check_input(std::span<const double> input) {
  if (input.size() != kInputSize)
    throw Error(ErrorKind::shape_mismatch, "input length " + std::to_string(input.size()) + ", expected 784");
}

inline void check_label(int label) {
  if (label < 0 || label >= static_cast<int>(kOutputSize))
    throw Error(ErrorKind::label_out_of_range, "label " + std::to_string(label));
}

inline void hidden_layer(const ModelParams& p, const double* x, Activation act, double* hidden) {
  const double* w1 = p.w1().data();
  const double* b1 = p.b1().data();
  for (std::size_t h = 0; h < kHiddenSize; ++h)
    hidden[h] = activation(dot(w1 + h * kInputSize, x, kInputSize) + b1[h], act);
}

inline void output_layer(const ModelParams& p, const double* hidden, double* logits) {
  const double* w2 = p.w2().data();
  const double* b2 = p.b2().data();
  for (std::size_t k = 0; k < kOutputSize; ++k) logits[k] = dot(w2 + k * kHiddenSize, hidden, kHiddenSize) + b2[k];
}

// Backpropagated error at the hidden units for output delta `delta_out`.
inline void hidden_delta(const ModelParams& p, const double* hidden, const double* delta_out, Activation act,
                         double* delta_hidden) {
  const double* w2 = p.w2().data();
  for (std::size_t h = 0; h < kHiddenSize; ++h) delta_hidden[h] = 0.0;
  for (std::size_t k = 0; k < kOutputSize; ++k) {
    const double d = delta_out[k];
    const double* row = w2 + k * kHiddenSize;
    for (std::size_t h = 0; h < kHiddenSize; ++h) delta_hidden[h] += row[h] * d;
  }
  for (std::size_t h = 0; h < kHiddenSize; ++h) delta_hidden[h] *= activation_slope(hidden[h], act);
}

}  // namespace detail

inline Probabilities softmax(const Logits& logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  Probabilities probs{};
  double total = 0.0;
  for (std::size_t k = 0; k < kOutputSize; ++k) {
    probs[k] = std::exp(logits[k] - top);
    total += probs[k];
  }
  for (auto& p : probs) p /= total;
  return probs;
}

/// Index of the largest entry; ties go to the lowest index.
inline int argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < values.size(); ++k)
    if (values[k] > values[best]) best = k;
  return static_cast<int>(best);
}

inline ForwardTrace forward(const ModelParams& params, std::span<const double> input,
                            Activation act = Activation::logistic) {
  detail::check_input(input);
  ForwardTrace trace;
  detail::hidden_layer(params, input.data(), act, trace.hidden.data());
  detail::output_layer(params, trace.hidden.data(), trace.logits.data());
  trace.probs = softmax(trace.logits);
  return trace;
}

inline constexpr double kMinProbability = 1e-300;

/// Cross-entropy of one example.
inline double loss(const Probabilities& probs, int label) {
  detail::check_label(label);
  return -std::log(std::max(probs[static_cast<std::size_t>(label)], kMinProbability));
}

/// Exact gradient of loss(softmax(forward(x)), label) for every parameter.
inline Gradients backward(const ModelParams& params, std::span<const double> input, int label,
                          Activation act = Activation::logistic) {
  detail::check_label(label);
  const auto trace = forward(params, input, act);

  std::array<double, kOutputSize> delta_out{};
  for (std::size_t k = 0; k < kOutputSize; ++k) delta_out[k] = trace.probs[k];
  delta_out[static_cast<std::size_t>(label)] -= 1.0;

  std::array<double, kHiddenSize> delta_hidden{};
  detail::hidden_delta(params, trace.hidden.data(), delta_out.data(), act, delta_hidden.data());

  Gradients grads;
  auto gw2 = grads.w2();
  for (std::size_t k = 0; k < kOutputSize; ++k) {
    grads.b2()[k] = delta_out[k];
    for (std::size_t h = 0; h < kHiddenSize; ++h) gw2[k * kHiddenSize + h] = delta_out[k] * trace.hidden[h];
  }
  auto gw1 = grads.w1();
  for (std::size_t h = 0; h < kHiddenSize; ++h) {
    grads.b1()[h] = delta_hidden[h];
    for (std::size_t j = 0; j < kInputSize; ++j) gw1[h * kInputSize + j] = delta_hidden[h] * input[j];
  }
  return grads;
}

inline ModelParams sgd_step(const ModelParams& params, const Gradients& grads, double lr) {
  if (!(lr > 0.0)) throw Error(ErrorKind::non_positive_learning_rate, "learning rate must be > 0");
  ModelParams next = params;
  auto update = [lr](std::span<double> p, std::span<const double> g) {
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = p[i] - lr * g[i];
  };
  update(next.w1(), grads.w1());
  update(next.b1(), grads.b1());
  update(next.w2(), grads.w2());
  update(next.b2(), grads.b2());
  return next;
}

namespace detail {

/// One in-place SGD update on a single example. Bit-identical to
/// sgd_step(params, backward(params, x, label), lr) without materializing the
/// gradient. Returns the example's loss before the update.
inline double sgd_update_in_place(ModelParams& params, const double* x, int label, double lr, Activation act) {
  std::array<double, kHiddenSize> hidden{};
  Logits logits{};
  hidden_layer(params, x, act, hidden.data());
  output_layer(params, hidden.data(), logits.data());
  const auto probs = softmax(logits);
  const double example_loss = -std::log(std::max(probs[static_cast<std::size_t>(label)], kMinProbability));

  std::array<double, kOutputSize> delta_out{};
  for (std::size_t k = 0; k < kOutputSize; ++k) delta_out[k] = probs[k];
  delta_out[static_cast<std::size_t>(label)] -= 1.0;

  // Hidden deltas read W2 before it is updated.
  std::array<double, kHiddenSize> delta_hidden{};
  hidden_delta(params, hidden.data(), delta_out.data(), act, delta_hidden.data());

  double* w2 = params.w2().data();
  double* b2 = params.b2().data();
  for (std::size_t k = 0; k < kOutputSize; ++k) {
    const double d = delta_out[k];
    double* row = w2 + k * kHiddenSize;
    for (std::size_t h = 0; h < kHiddenSize; ++h) row[h] = row[h] - lr * (d * hidden[h]);
    b2[k] = b2[k] - lr * d;
  }
  double* w1 = params.w1().data();
  double* b1 = params.b1().data();
  for (std::size_t h = 0; h < kHiddenSize; ++h) {
    const double d = delta_hidden[h];
    double* row = w1 + h * kInputSize;
    for (std::size_t j = 0; j < kInputSize; ++j) row[j] = row[j] - lr * (d * x[j]);
    b1[h] = b1[h] - lr * d;
  }
  return example_loss;
}

}  // namespace detail

// Flat little-endian record: "EFPARAM1", W1, b1, W2, b2 as IEEE-754 doubles.
inline constexpr std::string_view kParamsMagic = "EFPARAM1";
inline constexpr std::size_t kParamsRecordSize = 8 + ModelParams::kTotalSize * 8;

inline Bytes serialize_params(const ModelParams& params) {
  Bytes out;
  out.reserve(kParamsRecordSize);
  append_magic(out, kParamsMagic);
  params.for_each_block([&](std::span<const double> block) {
    for (double v : block) append_f64_le(out, v);
  });
  return out;
}

inline ModelParams deserialize_params(std::span<const std::uint8_t> bytes) {
  if (!has_magic(bytes, kParamsMagic)) throw Error(ErrorKind::wrong_magic, "not an EFPARAM1 record");
  if (bytes.size() < kParamsRecordSize) throw Error(ErrorKind::truncated_payload, "EFPARAM1 record too short");
  if (bytes.size() > kParamsRecordSize) throw Error(ErrorKind::trailing_bytes, "EFPARAM1 record too long");
  ModelParams params;
  std::size_t at = 8;
  params.for_each_block([&](std::span<double> block) {
    for (auto& v : block) {
      v = read_f64_le(bytes, at);
      at += 8;
    }
  });
  return params;
}

}  // namespace ensemble_forge
