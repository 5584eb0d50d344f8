#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "ensemble_forge/bootstrap.hpp"
#include "ensemble_forge/ensemble.hpp"
#include "ensemble_forge/error.hpp"
#include "ensemble_forge/mnist_io.hpp"
#include "ensemble_forge/random.hpp"
#include "ensemble_forge/text.hpp"
#include "ensemble_forge/trainer.hpp"

namespace ensemble_forge {

struct SeedTriple {
  std::uint64_t init_seed = 0;
  std::uint64_t shuffle_seed = 0;
  std::uint64_t mask_seed = 0;
  bool operator==(const SeedTriple&) const = default;
};

/// keyed_hash(master, tag, id) per stream. mix64 is a bijection, so within one
/// tag distinct ids never collide.
inline SeedTriple derive_seeds(std::uint64_t master_seed, int model_id) {
  const auto id = static_cast<std::uint64_t>(model_id);
  return {keyed_hash(master_seed, seed_tag::init_weights, id), keyed_hash(master_seed, seed_tag::shuffle, id),
          keyed_hash(master_seed, seed_tag::mask, id)};
}

/// The traditional baseline is model 0 of a plan keyed by this seed.
inline std::uint64_t traditional_master_seed(std::uint64_t master_seed) {
  return keyed_hash(master_seed, seed_tag::traditional, 0);
}

struct RunPlan {
  std::uint64_t master_seed = 0;
  int n_models = 1;
  TrainConfig train_template;  // seeds, sweeps and checkpoints are overwritten per model
  std::vector<int> checkpoints{1};
  Variant variant = Variant::plain;
  std::size_t worker_count = 1;
  MaskDomain mask_domain = MaskDomain::zero_mean;

  void validate() const {
    if (n_models < 1) throw Error(ErrorKind::config_invalid, "n_models must be >= 1");
    if (worker_count < 1) throw Error(ErrorKind::config_invalid, "worker_count must be >= 1");
    if (checkpoints.empty()) throw Error(ErrorKind::config_invalid, "at least one checkpoint sweep is required");
    model_config(0).validate();
  }

  TrainConfig model_config(int model_id) const {
    const auto seeds = derive_seeds(master_seed, model_id);
    TrainConfig cfg = train_template;
    cfg.init_seed = seeds.init_seed;
    cfg.shuffle_seed = seeds.shuffle_seed;
    cfg.sweeps = checkpoints.empty() ? 1 : checkpoints.back();
    cfg.checkpoints = checkpoints;
    return cfg;
  }
};

struct MaskInfo {
  std::uint64_t seed = 0;
  std::size_t source_index = 0;
  std::uint64_t checksum = 0;
  bool operator==(const MaskInfo&) const = default;
};

struct ModelResult {
  int model_id = 0;
  SeedTriple seeds;
  std::optional<MaskInfo> mask;          // bootstrap variant only
  std::vector<LogitMatrix> logits;       // one per checkpoint
  std::vector<double> individual_error;  // one per checkpoint
  bool operator==(const ModelResult&) const = default;
};

namespace detail {

inline void check_datasets(const Dataset& train, const Dataset& test) {
  if (train.empty() || test.empty()) throw Error(ErrorKind::empty_dataset, "train and test must be nonempty");
  if (train.mean_offset != test.mean_offset)
    throw Error(ErrorKind::mean_offset_mismatch, "test set was not normalized with the training offset");
}

template <ExampleSource Train, ExampleSource Test>
void train_and_score(const RunPlan& plan, int model_id, const Train& train, const Test& test, ModelResult& out) {
  const auto cfg = plan.model_config(model_id);
  const auto report = train_local_model(train, cfg);
  for (const auto& checkpoint : report.checkpoints) {
    LogitMatrix m{model_id, checkpoint.sweep, plan.variant, compute_logits(checkpoint.params, test, cfg.activation)};
    out.individual_error.push_back(error_rate(m.values, test.label_span()));
    out.logits.push_back(std::move(m));
  }
}

}  // namespace detail

/// One local-model pipeline: seeds, optional mask, training, test logits at each checkpoint.
inline ModelResult run_model(const RunPlan& plan, int model_id, const Dataset& train, const Dataset& test) {
  ModelResult result;
  result.model_id = model_id;
  result.seeds = derive_seeds(plan.master_seed, model_id);
  if (plan.variant == Variant::bootstrap) {
    const auto mask = select_mask(train, result.seeds.mask_seed, plan.mask_domain);
    result.mask = MaskInfo{mask.seed, mask.source_index, mask_checksum(mask)};
    detail::train_and_score(plan, model_id, MaskedView(train, mask), MaskedView(test, mask), result);
  } else {
    detail::train_and_score(plan, model_id, train, test, result);
  }
  return result;
}

/// Runs the listed model ids on a pool of plan.worker_count threads and hands
/// each result to `sink` on the calling thread, in the order of `ids`. Workers
/// stay at most 2 x worker_count jobs ahead of the sink, which bounds memory.
template <typename Sink>
void run_models(const RunPlan& plan, std::span<const int> ids, const Dataset& train, const Dataset& test,
                Sink&& sink) {
  plan.validate();
  detail::check_datasets(train, test);
  for (int id : ids)
    if (id < 0 || id >= plan.n_models) throw Error(ErrorKind::unknown_model_id, "model id " + std::to_string(id));
  if (ids.empty()) return;

  const std::size_t workers = std::min(plan.worker_count, ids.size());
  const std::size_t window = 2 * workers;
  std::mutex mutex;
  std::condition_variable cv;
  std::map<std::size_t, ModelResult> ready;
  std::size_t next_job = 0;
  std::size_t next_emit = 0;
  bool stop = false;
  std::exception_ptr failure;

  auto work = [&] {
    while (true) {
      std::size_t job = 0;
      {
        std::unique_lock lock(mutex);
        cv.wait(lock, [&] { return stop || next_job >= ids.size() || next_job < next_emit + window; });
        if (stop || next_job >= ids.size()) return;
        job = next_job++;
      }
      try {
        auto result = run_model(plan, ids[job], train, test);
        std::lock_guard lock(mutex);
        ready.emplace(job, std::move(result));
      } catch (...) {
        std::lock_guard lock(mutex);
        if (!failure) failure = std::current_exception();
        stop = true;
      }
      cv.notify_all();
    }
  };

  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);

    while (true) {
      std::unique_lock lock(mutex);
      cv.wait(lock, [&] { return failure || next_emit >= ids.size() || ready.contains(next_emit); });
      if (failure || next_emit >= ids.size()) break;
      auto node = ready.extract(next_emit);
      lock.unlock();
      try {
        sink(std::move(node.mapped()));
      } catch (...) {
        lock.lock();
        if (!failure) failure = std::current_exception();
        break;
      }
      lock.lock();
      ++next_emit;
      cv.notify_all();
    }
    {
      std::lock_guard lock(mutex);
      stop = true;
    }
    cv.notify_all();
  }  // pool joins here
  if (failure) std::rethrow_exception(failure);
}

inline std::vector<ModelResult> run_plan(const RunPlan& plan, const Dataset& train, const Dataset& test) {
  plan.validate();
  std::vector<int> ids(static_cast<std::size_t>(plan.n_models));
  for (int i = 0; i < plan.n_models; ++i) ids[static_cast<std::size_t>(i)] = i;
  std::vector<ModelResult> results;
  results.reserve(ids.size());
  run_models(plan, ids, train, test, [&](ModelResult&& r) { results.push_back(std::move(r)); });
  return results;
}

/// Ascending ids of the plan that are not in `completed`.
inline std::vector<int> remaining_ids(const RunPlan& plan, const std::set<int>& completed) {
  for (int id : completed)
    if (id < 0 || id >= plan.n_models)
      throw Error(ErrorKind::unknown_model_id, "completed id " + std::to_string(id) + " not in plan");
  std::vector<int> ids;
  for (int i = 0; i < plan.n_models; ++i)
    if (!completed.contains(i)) ids.push_back(i);
  return ids;
}

inline std::vector<ModelResult> resume(const RunPlan& plan, const std::set<int>& completed, const Dataset& train,
                                       const Dataset& test) {
  plan.validate();
  const auto ids = remaining_ids(plan, completed);
  std::vector<ModelResult> results;
  run_models(plan, ids, train, test, [&](ModelResult&& r) { results.push_back(std::move(r)); });
  return results;
}

// Per-model metadata, one row per (model, checkpoint sweep).
inline constexpr std::string_view kManifestHeader =
    "model_id,variant,init_seed,shuffle_seed,mask_seed,mask_source_index,mask_checksum,sweep,individual_error";

inline std::vector<std::string> manifest_rows(const ModelResult& r, Variant variant) {
  std::vector<std::string> rows;
  for (std::size_t k = 0; k < r.logits.size(); ++k) {
    std::string line = std::to_string(r.model_id) + "," + std::string(to_string(variant)) + "," +
                       std::to_string(r.seeds.init_seed) + "," + std::to_string(r.seeds.shuffle_seed) + ",";
    if (r.mask) {
      line += std::to_string(r.mask->seed) + "," + std::to_string(r.mask->source_index) + "," +
              format_hex64(r.mask->checksum);
    } else {
      line += ",,";
    }
    line += "," + std::to_string(r.logits[k].iteration) + "," + format_real(r.individual_error[k]);
    rows.push_back(std::move(line));
  }
  return rows;
}

/// On-disk logit cache:
///   <dir>/model_<id>_<variant>_s<sweep>.logit   (EFLOGIT1)
///   <dir>/manifest.csv                           (kManifestHeader columns)
/// A manifest row is appended only after the model's logit files are written,
/// so a row marks its files as complete.
class ResultCache {
 public:
  explicit ResultCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw Error(ErrorKind::io_failure, "cannot create cache dir " + dir_.string() + ": " + ec.message());
  }

  const std::filesystem::path& dir() const { return dir_; }

  std::filesystem::path logit_path(int model_id, Variant variant, int sweep) const {
    return dir_ / ("model_" + std::to_string(model_id) + "_" + std::string(to_string(variant)) + "_s" +
                   std::to_string(sweep) + ".logit");
  }

  void store(const ModelResult& r, Variant variant) const {
    for (const auto& m : r.logits) write_file(logit_path(r.model_id, variant, m.iteration), serialize_logits(m));
    const auto manifest = dir_ / "manifest.csv";
    const bool fresh = !std::filesystem::exists(manifest);
    std::ofstream out(manifest, std::ios::app);
    if (!out) throw Error(ErrorKind::io_failure, "cannot append to " + manifest.string());
    if (fresh) out << kManifestHeader << '\n';
    for (const auto& row : manifest_rows(r, variant)) out << row << '\n';
    out.flush();
    if (!out) throw Error(ErrorKind::io_failure, "write failed: " + manifest.string());
  }

  /// Drops every manifest row of `variant`; its logit files become orphans
  /// that the next store overwrites.
  void forget(Variant variant) const {
    const auto manifest = dir_ / "manifest.csv";
    if (!std::filesystem::exists(manifest)) return;
    std::ifstream in(manifest);
    std::string line, kept;
    const std::string tag = "," + std::string(to_string(variant)) + ",";
    while (std::getline(in, line)) {
      const auto first = line.find(',');
      if (first != std::string::npos && line.compare(first, tag.size(), tag) == 0) continue;
      kept += line + "\n";
    }
    in.close();
    write_text_file(manifest, kept);
  }

  /// Results already cached for `plan`, keyed by model id. Models missing any
  /// checkpoint row or file are treated as not done. Rows whose seeds disagree
  /// with the plan mean the cache belongs to a different run and are rejected.
  std::map<int, ModelResult> load(const RunPlan& plan, std::size_t test_rows) const {
    std::map<int, ModelResult> done;
    const auto manifest = dir_ / "manifest.csv";
    if (!std::filesystem::exists(manifest)) return done;

    std::ifstream in(manifest);
    std::string line;
    std::map<int, std::map<int, double>> errors;  // id -> sweep -> error
    std::map<int, std::optional<MaskInfo>> masks;
    while (std::getline(in, line)) {
      if (line.empty() || line == kManifestHeader) continue;
      const auto f = split(line, ',');
      if (f.size() != 9) throw Error(ErrorKind::io_failure, "malformed cache manifest row: " + line);
      if (f[1] != to_string(plan.variant)) continue;
      const auto id = parse_number<int>(f[0]);
      const auto init = parse_number<std::uint64_t>(f[2]);
      const auto shuffle = parse_number<std::uint64_t>(f[3]);
      const auto sweep = parse_number<int>(f[7]);
      const auto error = parse_number<double>(f[8]);
      if (!id || !init || !shuffle || !sweep || !error)
        throw Error(ErrorKind::io_failure, "malformed cache manifest row: " + line);
      if (*id < 0 || *id >= plan.n_models) continue;
      const auto expected = derive_seeds(plan.master_seed, *id);
      if (*init != expected.init_seed || *shuffle != expected.shuffle_seed)
        throw Error(ErrorKind::config_invalid, "cache " + dir_.string() + " was produced by a different plan");
      errors[*id][*sweep] = *error;
      if (!f[4].empty()) {
        const auto seed = parse_number<std::uint64_t>(f[4]);
        const auto source = parse_number<std::size_t>(f[5]);
        const auto checksum = parse_number<std::uint64_t>(f[6], 16);
        if (!seed || !source || !checksum) throw Error(ErrorKind::io_failure, "malformed mask fields: " + line);
        masks[*id] = MaskInfo{*seed, *source, *checksum};
      }
    }

    for (const auto& [id, by_sweep] : errors) {
      ModelResult r;
      r.model_id = id;
      r.seeds = derive_seeds(plan.master_seed, id);
      r.mask = masks[id];
      bool complete = true;
      for (int sweep : plan.checkpoints) {
        const auto it = by_sweep.find(sweep);
        const auto path = logit_path(id, plan.variant, sweep);
        if (it == by_sweep.end() || !std::filesystem::exists(path)) {
          complete = false;
          break;
        }
        auto m = deserialize_logits(read_file(path));
        if (m.rows() != test_rows || m.model_id != id || m.iteration != sweep || m.variant != plan.variant)
          throw Error(ErrorKind::config_invalid, "cached logits " + path.string() + " do not match the plan");
        r.logits.push_back(std::move(m));
        r.individual_error.push_back(it->second);
      }
      if (complete) done.emplace(id, std::move(r));
    }
    return done;
  }

 private:
  std::filesystem::path dir_;
};

/// Full result stream for `plan` in ascending id order: cached models are read
/// back, missing ones are computed (and cached), and `sink` sees the union.
template <typename Sink>
void run_with_cache(const RunPlan& plan, const ResultCache& cache, bool reuse, const Dataset& train,
                    const Dataset& test, Sink&& sink) {
  plan.validate();
  if (!reuse) cache.forget(plan.variant);
  auto cached = reuse ? cache.load(plan, test.size()) : std::map<int, ModelResult>{};
  std::set<int> completed;
  for (const auto& [id, r] : cached) completed.insert(id);
  const auto todo = remaining_ids(plan, completed);

  auto flush_cached_below = [&](int limit) {
    while (!cached.empty() && cached.begin()->first < limit) {
      sink(std::move(cached.begin()->second));
      cached.erase(cached.begin());
    }
  };
  run_models(plan, todo, train, test, [&](ModelResult&& r) {
    cache.store(r, plan.variant);
    flush_cached_below(r.model_id);
    sink(std::move(r));
  });
  flush_cached_below(plan.n_models);
}

}  // namespace ensemble_forge
