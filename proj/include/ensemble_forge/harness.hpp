#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "ensemble_forge/bootstrap.hpp"
#include "ensemble_forge/byte_io.hpp"
#include "ensemble_forge/ensemble.hpp"
#include "ensemble_forge/error.hpp"
#include "ensemble_forge/mnist_io.hpp"
#include "ensemble_forge/orchestrator.hpp"
#include "ensemble_forge/text.hpp"
#include "ensemble_forge/trainer.hpp"

namespace ensemble_forge {

struct ExperimentConfig {
  std::filesystem::path data_dir = "data/mnist";
  std::filesystem::path output_dir = "out";
  std::optional<std::filesystem::path> cache_dir;
  bool resume = false;
  std::optional<std::size_t> train_subset = 10000;  // nullopt = all rows
  std::optional<std::size_t> test_subset = 2000;
  int n_models = 32;
  std::vector<int> checkpoints{1, 2, 6};
  std::vector<int> n_grid{1, 2, 4, 8, 16, 32};
  std::vector<Variant> variants{Variant::traditional, Variant::plain, Variant::bootstrap};
  std::uint64_t master_seed = 1;
  double learning_rate = kDefaultLearningRate;
  double init_scale = kDefaultInitScale;
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  Activation activation = Activation::logistic;
  MaskDomain mask_domain = MaskDomain::zero_mean;
  bool record_wall_time = false;

  bool runs(Variant v) const { return std::find(variants.begin(), variants.end(), v) != variants.end(); }
  bool runs_parallel() const { return runs(Variant::plain) || runs(Variant::bootstrap); }

  void validate() const {
    auto fail = [](const std::string& why) { throw Error(ErrorKind::config_invalid, why); };
    if (variants.empty()) fail("no variant selected");
    if (checkpoints.empty()) fail("checkpoints must not be empty");
    for (std::size_t i = 0; i < checkpoints.size(); ++i)
      if (checkpoints[i] < 1 || (i > 0 && checkpoints[i] <= checkpoints[i - 1]))
        fail("checkpoints must be positive and strictly increasing");
    if (!(learning_rate > 0.0)) fail("learning-rate must be > 0");
    if (!(init_scale > 0.0)) fail("init-scale must be > 0");
    if (workers < 1) fail("workers must be >= 1");
    if (train_subset && *train_subset == 0) fail("train-subset must be positive or 'all'");
    if (test_subset && *test_subset == 0) fail("test-subset must be positive or 'all'");
    if (runs_parallel()) {
      if (n_models < 1) fail("n-models must be >= 1");
      if (n_grid.empty()) fail("n-grid must not be empty");
      for (std::size_t i = 0; i < n_grid.size(); ++i)
        if (n_grid[i] < 1 || (i > 0 && n_grid[i] <= n_grid[i - 1])) fail("n-grid must be positive and strictly increasing");
      if (n_grid.back() > n_models) fail("n-grid values must not exceed n-models");
    }
  }
};

namespace detail {

inline std::vector<int> parse_int_list(std::string_view key, std::string_view value) {
  std::vector<int> out;
  if (trim(value).empty()) return out;
  for (const auto& part : split(value, ',')) {
    const auto v = parse_number<int>(trim(part));
    if (!v) throw Error(ErrorKind::config_invalid, std::string(key) + ": not an integer list: " + std::string(value));
    out.push_back(*v);
  }
  return out;
}

inline std::string join_ints(const std::vector<int>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + std::to_string(values[i]);
  return out;
}

template <typename T>
T parse_scalar(std::string_view key, std::string_view value) {
  const auto v = parse_number<T>(trim(value));
  if (!v) throw Error(ErrorKind::config_invalid, std::string(key) + ": bad value '" + std::string(value) + "'");
  return *v;
}

inline bool parse_bool(std::string_view key, std::string_view value) {
  const auto v = trim(value);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorKind::config_invalid, std::string(key) + ": expected true/false");
}

inline std::optional<std::size_t> parse_subset(std::string_view key, std::string_view value) {
  if (trim(value) == "all") return std::nullopt;
  return parse_scalar<std::size_t>(key, value);
}

inline std::string format_subset(const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : "all"; }

struct ConfigKey {
  std::string_view name;
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"data-dir", [](auto& c, auto v) { c.data_dir = std::string(trim(v)); },
       [](const auto& c) { return c.data_dir.string(); }},
      {"output-dir", [](auto& c, auto v) { c.output_dir = std::string(trim(v)); },
       [](const auto& c) { return c.output_dir.string(); }},
      {"cache-dir",
       [](auto& c, auto v) {
         if (trim(v).empty()) c.cache_dir.reset();
         else c.cache_dir = std::string(trim(v));
       },
       [](const auto& c) { return c.cache_dir ? c.cache_dir->string() : std::string(); }},
      {"resume", [](auto& c, auto v) { c.resume = parse_bool("resume", v); },
       [](const auto& c) { return std::string(c.resume ? "true" : "false"); }},
      {"variant",
       [](auto& c, auto v) {
         c.variants.clear();
         for (const auto& part : split(v, ',')) {
           const auto parsed = parse_variant(trim(part));
           if (!parsed) throw Error(ErrorKind::config_invalid, "variant: unknown '" + part + "'");
           if (!c.runs(*parsed)) c.variants.push_back(*parsed);
         }
       },
       [](const auto& c) {
         std::string out;
         for (std::size_t i = 0; i < c.variants.size(); ++i) out += (i ? "," : "") + std::string(to_string(c.variants[i]));
         return out;
       }},
      {"n-models", [](auto& c, auto v) { c.n_models = parse_scalar<int>("n-models", v); },
       [](const auto& c) { return std::to_string(c.n_models); }},
      {"n-grid", [](auto& c, auto v) { c.n_grid = parse_int_list("n-grid", v); },
       [](const auto& c) { return join_ints(c.n_grid); }},
      {"checkpoints", [](auto& c, auto v) { c.checkpoints = parse_int_list("checkpoints", v); },
       [](const auto& c) { return join_ints(c.checkpoints); }},
      {"train-subset", [](auto& c, auto v) { c.train_subset = parse_subset("train-subset", v); },
       [](const auto& c) { return format_subset(c.train_subset); }},
      {"test-subset", [](auto& c, auto v) { c.test_subset = parse_subset("test-subset", v); },
       [](const auto& c) { return format_subset(c.test_subset); }},
      {"master-seed", [](auto& c, auto v) { c.master_seed = parse_scalar<std::uint64_t>("master-seed", v); },
       [](const auto& c) { return std::to_string(c.master_seed); }},
      {"learning-rate", [](auto& c, auto v) { c.learning_rate = parse_scalar<double>("learning-rate", v); },
       [](const auto& c) { return format_real(c.learning_rate); }},
      {"init-scale", [](auto& c, auto v) { c.init_scale = parse_scalar<double>("init-scale", v); },
       [](const auto& c) { return format_real(c.init_scale); }},
      {"workers", [](auto& c, auto v) { c.workers = parse_scalar<std::size_t>("workers", v); },
       [](const auto& c) { return std::to_string(c.workers); }},
      {"activation",
       [](auto& c, auto v) {
         if (trim(v) == "logistic") c.activation = Activation::logistic;
         else if (trim(v) == "tanh") c.activation = Activation::tanh;
         else throw Error(ErrorKind::config_invalid, "activation: expected logistic or tanh");
       },
       [](const auto& c) { return std::string(to_string(c.activation)); }},
      {"mask-domain",
       [](auto& c, auto v) {
         const auto t = trim(v);
         if (t == "zero_mean") c.mask_domain = MaskDomain::zero_mean;
         else if (t == "unit") c.mask_domain = MaskDomain::unit;
         else if (t == "raw") c.mask_domain = MaskDomain::raw;
         else throw Error(ErrorKind::config_invalid, "mask-domain: expected zero_mean, unit or raw");
       },
       [](const auto& c) { return std::string(to_string(c.mask_domain)); }},
      {"record-wall-time", [](auto& c, auto v) { c.record_wall_time = parse_bool("record-wall-time", v); },
       [](const auto& c) { return std::string(c.record_wall_time ? "true" : "false"); }},
  };
  return keys;
}

}  // namespace detail

inline bool is_config_key(std::string_view key) {
  const auto& keys = detail::config_keys();
  return std::any_of(keys.begin(), keys.end(), [&](const auto& k) { return k.name == key; });
}

inline void apply_setting(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& k : detail::config_keys()) {
    if (k.name == key) {
      k.set(cfg, value);
      return;
    }
  }
  throw Error(ErrorKind::config_invalid, "unknown key '" + std::string(key) + "'");
}

/// key=value lines; '#' starts a comment. Unknown or repeated keys are errors.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> settings;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw Error(ErrorKind::config_invalid, "line " + std::to_string(line_no) + ": expected key=value");
    std::string key(trim(line.substr(0, eq)));
    if (!is_config_key(key))
      throw Error(ErrorKind::config_invalid, "line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    for (const auto& [seen, _] : settings)
      if (seen == key) throw Error(ErrorKind::config_invalid, "line " + std::to_string(line_no) + ": repeated key '" + key + "'");
    settings.emplace_back(std::move(key), std::string(trim(line.substr(eq + 1))));
  }
  return settings;
}

inline ExperimentConfig load_config_file(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  ExperimentConfig cfg;
  for (const auto& [key, value] : parse_config_text(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size())))
    apply_setting(cfg, key, value);
  return cfg;
}

/// Every key with its effective value, in a fixed order; parses back to the same config.
inline std::string resolved_config_text(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& k : detail::config_keys()) out += std::string(k.name) + "=" + k.get(cfg) + "\n";
  return out;
}

struct SweepRow {
  Variant variant = Variant::plain;
  int iteration = 0;
  int n = 0;
  double error = 0.0;
  double wall_seconds = 0.0;
  bool operator==(const SweepRow&) const = default;
};

inline constexpr std::string_view kCurvesHeader = "variant,iteration,N,error,wall_seconds";

inline void sort_rows(std::vector<SweepRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    const auto va = to_string(a.variant), vb = to_string(b.variant);
    if (va != vb) return va < vb;
    if (a.iteration != b.iteration) return a.iteration < b.iteration;
    return a.n < b.n;
  });
}

inline std::string curves_csv_text(std::vector<SweepRow> rows) {
  sort_rows(rows);
  std::string out(kCurvesHeader);
  out += '\n';
  for (const auto& r : rows) {
    out += std::string(to_string(r.variant)) + "," + std::to_string(r.iteration) + "," + std::to_string(r.n) + "," +
           format_real(r.error) + "," + format_real(r.wall_seconds) + "\n";
  }
  return out;
}

inline void emit_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
  write_text_file(path, curves_csv_text(rows));
}

inline std::vector<SweepRow> parse_curves_csv(std::string_view text) {
  std::vector<SweepRow> rows;
  const auto lines = split(text, '\n');
  if (lines.empty() || trim(lines.front()) != kCurvesHeader)
    throw Error(ErrorKind::io_failure, "curves file lacks the expected header");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const auto f = split(trim(lines[i]), ',');
    const auto variant = f.size() == 5 ? parse_variant(f[0]) : std::nullopt;
    const auto iteration = f.size() == 5 ? parse_number<int>(f[1]) : std::nullopt;
    const auto n = f.size() == 5 ? parse_number<int>(f[2]) : std::nullopt;
    const auto error = f.size() == 5 ? parse_number<double>(f[3]) : std::nullopt;
    const auto wall = f.size() == 5 ? parse_number<double>(f[4]) : std::nullopt;
    if (!variant || !iteration || !n || !error || !wall)
      throw Error(ErrorKind::io_failure, "malformed curves row " + std::to_string(i + 1));
    rows.push_back({*variant, *iteration, *n, *error, *wall});
  }
  return rows;
}

struct VariantOutcome {
  std::vector<SweepRow> rows;
  std::vector<std::string> manifest;  // manifest.csv rows, ascending model id
  std::vector<ModelResult> results;   // filled only when retention is requested
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<std::string> manifest;
  std::map<Variant, std::vector<ModelResult>> results;  // only when retained
  bool operator==(const SweepResult&) const = default;
};

inline std::string manifest_csv_text(const std::vector<std::string>& rows) {
  std::string out(kManifestHeader);
  out += '\n';
  for (const auto& row : rows) out += row + "\n";
  return out;
}

/// One configured experiment over already-normalized data. `load` reads and
/// subsets MNIST from cfg.data_dir; tests may construct one from fixtures.
class Experiment {
 public:
  Experiment(ExperimentConfig cfg, Dataset train, Dataset test)
      : cfg_(std::move(cfg)), train_(std::move(train)), test_(std::move(test)) {
    cfg_.validate();
  }

  static Experiment load(ExperimentConfig cfg) {
    cfg.validate();
    auto mnist = load_mnist(cfg.data_dir);
    return from_full_data(std::move(cfg), std::move(mnist.train), std::move(mnist.test));
  }

  /// Applies the configured subsets (seeded from the master seed) to full splits.
  static Experiment from_full_data(ExperimentConfig cfg, Dataset train, Dataset test) {
    if (cfg.train_subset)
      train = subset(train, *cfg.train_subset, keyed_hash(cfg.master_seed, seed_tag::train_subset, 0));
    if (cfg.test_subset)
      test = subset(test, *cfg.test_subset, keyed_hash(cfg.master_seed, seed_tag::test_subset, 0));
    return Experiment(std::move(cfg), std::move(train), std::move(test));
  }

  const ExperimentConfig& config() const { return cfg_; }
  const Dataset& train() const { return train_; }
  const Dataset& test() const { return test_; }

  RunPlan plan_for(Variant variant) const {
    RunPlan plan;
    plan.variant = variant;
    plan.master_seed = variant == Variant::traditional ? traditional_master_seed(cfg_.master_seed) : cfg_.master_seed;
    plan.n_models = variant == Variant::traditional ? 1 : cfg_.n_models;
    plan.checkpoints = cfg_.checkpoints;
    plan.worker_count = cfg_.workers;
    plan.mask_domain = cfg_.mask_domain;
    plan.train_template.learning_rate = cfg_.learning_rate;
    plan.train_template.init_scale = cfg_.init_scale;
    plan.train_template.activation = cfg_.activation;
    return plan;
  }

  /// One model trained for max(checkpoints) sweeps; one N=1 row per checkpoint.
  VariantOutcome run_traditional(bool retain = false) const {
    if (!cfg_.runs(Variant::traditional)) throw Error(ErrorKind::config_invalid, "traditional variant not selected");
    return run_variant(Variant::traditional, {1}, retain);
  }

  /// Ensemble curve rows for every (checkpoint, N in n_grid).
  VariantOutcome run_parallel(Variant variant, bool retain = false) const {
    if (variant == Variant::traditional || !cfg_.runs(variant))
      throw Error(ErrorKind::config_invalid, std::string(to_string(variant)) + " is not a selected parallel variant");
    return run_variant(variant, cfg_.n_grid, retain);
  }

  /// All selected variants in the order traditional, plain, bootstrap.
  SweepResult run_all(bool retain = false) const {
    SweepResult result;
    for (auto v : {Variant::traditional, Variant::plain, Variant::bootstrap}) {
      if (!cfg_.runs(v)) continue;
      auto outcome = v == Variant::traditional ? run_traditional(retain) : run_parallel(v, retain);
      result.rows.insert(result.rows.end(), outcome.rows.begin(), outcome.rows.end());
      result.manifest.insert(result.manifest.end(), outcome.manifest.begin(), outcome.manifest.end());
      if (retain) result.results.emplace(v, std::move(outcome.results));
    }
    sort_rows(result.rows);
    return result;
  }

  /// Runs everything and writes curves.csv, manifest.csv and config.resolved.
  SweepResult run_and_write(bool retain = false) const {
    std::error_code ec;
    std::filesystem::create_directories(cfg_.output_dir, ec);
    if (ec) throw Error(ErrorKind::io_failure, "cannot create " + cfg_.output_dir.string() + ": " + ec.message());
    write_text_file(cfg_.output_dir / "config.resolved", resolved_config_text(cfg_));
    auto result = run_all(retain);
    emit_csv(result.rows, cfg_.output_dir / "curves.csv");
    write_text_file(cfg_.output_dir / "manifest.csv", manifest_csv_text(result.manifest));
    return result;
  }

 private:
  VariantOutcome run_variant(Variant variant, const std::vector<int>& grid, bool retain) const {
    const auto plan = plan_for(variant);
    const auto started = std::chrono::steady_clock::now();

    std::vector<CumulativeCurve> curves;
    curves.reserve(plan.checkpoints.size());
    for (std::size_t k = 0; k < plan.checkpoints.size(); ++k) curves.emplace_back(test_.labels, grid);

    VariantOutcome outcome;
    auto sink = [&](ModelResult&& r) {
      for (std::size_t k = 0; k < r.logits.size(); ++k) curves[k].add(r.logits[k]);
      auto rows = manifest_rows(r, variant);
      outcome.manifest.insert(outcome.manifest.end(), rows.begin(), rows.end());
      if (retain) outcome.results.push_back(std::move(r));
    };
    if (cfg_.cache_dir) {
      const ResultCache cache(*cfg_.cache_dir);
      run_with_cache(plan, cache, cfg_.resume, train_, test_, sink);
    } else {
      std::vector<int> ids(static_cast<std::size_t>(plan.n_models));
      for (int i = 0; i < plan.n_models; ++i) ids[static_cast<std::size_t>(i)] = i;
      run_models(plan, ids, train_, test_, sink);
    }

    const double wall = cfg_.record_wall_time
                            ? std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count()
                            : 0.0;
    for (std::size_t k = 0; k < curves.size(); ++k)
      for (const auto& point : curves[k].curve().points)
        outcome.rows.push_back({variant, plan.checkpoints[k], point.n, point.error, wall});
    return outcome;
  }

  ExperimentConfig cfg_;
  Dataset train_;
  Dataset test_;
};

}  // namespace ensemble_forge
