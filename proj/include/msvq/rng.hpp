// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace msvq {

/// FNV-1a of a stream name, for naming substreams ("augment", "init", ...).
std::uint64_t stream_id(std::string_view name) noexcept;

/// Order-sensitive combination of two stream identifiers.
std::uint64_t mix_stream(std::uint64_t a, std::uint64_t b) noexcept;

/// Deterministic generator keyed by (seed, stream). Identical keys give identical
/// sequences on every platform: the engine is mt19937_64 and all distributions
/// are computed here rather than through <random>'s unspecified ones.
class SeededRng {
 public:
  static constexpr std::string_view kAlgorithm = "mt19937_64+splitmix64";

  explicit SeededRng(std::uint64_t seed = 0, std::uint64_t stream = 0);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

  /// Independent child stream (seed, mix(stream, sub)).
  SeededRng derive(std::uint64_t sub) const { return SeededRng(seed_, mix_stream(stream_, sub)); }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  /// Standard normal via Box–Muller.
  double normal();

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
};

}  // namespace msvq
