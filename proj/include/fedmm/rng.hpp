// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace fedmm {

/// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// FNV-1a over a label, used to turn stream purposes into keys.
constexpr std::uint64_t label_hash(std::string_view label) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// A named random stream. Streams are derived from a parent key by a chain of
/// mixes, so two streams with different paths never share state and derivation
/// order does not matter.
class Stream {
 public:
  using result_type = std::uint64_t;

  explicit Stream(std::uint64_t key) : key_(key), engine_(mix64(key)) {}

  /// Child stream for a labelled purpose ("schedule", "sample", ...).
  Stream child(std::string_view label) const { return Stream(mix64(key_ ^ label_hash(label))); }

  /// Child stream for an integer coordinate (seed index, client index, ...).
  Stream child(std::uint64_t index) const { return Stream(mix64(mix64(key_) + index)); }

  std::uint64_t key() const noexcept { return key_; }

  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return engine_(); }

  /// Uniform integer in [0, n).
  std::size_t uniform_index(std::size_t n) {
    std::uniform_int_distribution<std::size_t> dist(0, n - 1);
    return dist(engine_);
  }

  double normal(double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    return dist(engine_);
  }

 private:
  std::uint64_t key_;
  std::mt19937_64 engine_;
};

/// Root of the stream tree for one experiment.
inline Stream master_stream(std::uint64_t master_seed) { return Stream(master_seed); }

/// In-place Fisher-Yates shuffle driven by `rng`.
template <class T>
void fisher_yates(std::vector<T>& items, Stream& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = rng.uniform_index(i);
    std::swap(items[i - 1], items[j]);
  }
}

/// Uniform size-`k` subset of {0..n-1}, returned in ascending order.
inline std::vector<int> sample_without_replacement(int n, int k, Stream& rng) {
  std::vector<int> pool(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
  // Partial Fisher-Yates: the first k slots end up a uniform k-subset.
  for (int i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng.uniform_index(static_cast<std::size_t>(n - i));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
  }
  pool.resize(static_cast<std::size_t>(k));
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace fedmm
