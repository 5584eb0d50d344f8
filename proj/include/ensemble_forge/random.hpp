#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

namespace ensemble_forge {

// SplitMix64 finalizer. A bijection on 64-bit words, so keyed counters never
// collide for a fixed key.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based derivation: hash(key, tag) offsets a counter that is hashed again.
constexpr std::uint64_t keyed_hash(std::uint64_t key, std::uint64_t tag,
                                   std::uint64_t counter) noexcept {
  return mix64(mix64(key ^ mix64(tag)) + counter);
}

// Domain-separation tags.
namespace seed_tag {
inline constexpr std::uint64_t init_weights = 0x696e69745f773031ULL;  // "init_w01"
inline constexpr std::uint64_t shuffle = 0x73687566666c6531ULL;       // "shuffle1"
inline constexpr std::uint64_t mask = 0x6d61736b5f736531ULL;          // "mask_se1"
inline constexpr std::uint64_t sweep = 0x7377656570303031ULL;         // "sweep001"
inline constexpr std::uint64_t traditional = 0x7472616469743031ULL;   // "tradit01"
inline constexpr std::uint64_t train_subset = 0x7472737562303031ULL;  // "trsub001"
inline constexpr std::uint64_t test_subset = 0x7465737562303031ULL;   // "tesub001"
}  // namespace seed_tag

using Engine = std::mt19937_64;

/// 53-bit uniform in [0, 1). Distribution objects from <random> are not
/// specified bit-for-bit across standard libraries, so the mapping is explicit.
inline double uniform_unit(Engine& engine) {
  return static_cast<double>(engine() >> 11) * 0x1.0p-53;
}

/// Unbiased integer in [0, bound) by rejection. bound must be > 0.
inline std::uint64_t uniform_below(Engine& engine, std::uint64_t bound) {
  const std::uint64_t limit = (~std::uint64_t{0} / bound) * bound;
  std::uint64_t draw = engine();
  while (draw >= limit) draw = engine();
  return draw % bound;
}

/// Fisher-Yates shuffle driven by uniform_below.
template <typename T>
void shuffle_in_place(std::vector<T>& items, Engine& engine) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_below(engine, i));
    std::swap(items[i - 1], items[j]);
  }
}

inline std::vector<std::size_t> random_permutation(std::size_t n, Engine& engine) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle_in_place(order, engine);
  return order;
}

}  // namespace ensemble_forge
