#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace itmle {

// Counter-based deterministic random streams.
//
// Every draw is a pure function of (seed, stream, counter), so parallel code can
// evaluate draws by index in any shard layout and reproduce serial output exactly.
// Streams are derived from component names (FNV-1a) plus structural indices such as
// replication or fold numbers, never from thread ids.

std::uint64_t fnv1a64(std::string_view name);

// SplitMix64 finalizer: the avalanche mix used to key and advance streams.
std::uint64_t mix64(std::uint64_t z);

// Derive a child seed for a named component and index (documented derivation:
// child = mix(mix(seed) ^ fnv1a(name) ^ mix(index))).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view component, std::uint64_t index = 0);

class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::string_view stream_name, std::uint64_t stream_index = 0);

  // Raw 64 random bits for counter k.
  std::uint64_t bits(std::uint64_t k) const;

  // Uniform on (0,1), strictly interior (53-bit mantissa, offset half-ulp).
  double uniform(std::uint64_t k) const;

  // Standard normal via inverse CDF: one counter per variate.
  double normal(std::uint64_t k) const;

  bool bernoulli(std::uint64_t k, double p) const { return uniform(k) < p; }

  // Unbiased integer in [0, bound) via 128-bit multiply rejection; consumes
  // counters k, k+1, ... and reports how many were used.
  std::uint64_t bounded(std::uint64_t k, std::uint64_t bound, std::uint64_t* used) const;

 private:
  std::uint64_t key_;
};

// Deterministic Fisher-Yates shuffle driven by a CounterRng walk.
void shuffle_indices(std::vector<std::size_t>& idx, const CounterRng& rng);

}  // namespace itmle
