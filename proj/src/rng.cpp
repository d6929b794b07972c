#include "itmle/rng.hpp"

#include "itmle/stats.hpp"

namespace itmle {

std::uint64_t fnv1a64(std::string_view name) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view component, std::uint64_t index) {
  return mix64(mix64(seed) ^ fnv1a64(component) ^ mix64(index));
}

CounterRng::CounterRng(std::uint64_t seed, std::string_view stream_name, std::uint64_t stream_index)
    : key_(derive_seed(seed, stream_name, stream_index)) {}

std::uint64_t CounterRng::bits(std::uint64_t k) const {
  return mix64(key_ ^ (k * 0x9E3779B97F4A7C15ull + 0x2545F4914F6CDD1Dull));
}

double CounterRng::uniform(std::uint64_t k) const {
  // Top 53 bits -> [0,1); add half an ulp to stay strictly inside (0,1).
  return (static_cast<double>(bits(k) >> 11) + 0.5) * 0x1.0p-53;
}

double CounterRng::normal(std::uint64_t k) const { return normal_quantile(uniform(k)); }

std::uint64_t CounterRng::bounded(std::uint64_t k, std::uint64_t bound, std::uint64_t* used) const {
  // Lemire's multiply-shift with rejection for exact uniformity.
  const std::uint64_t threshold = (0 - bound) % bound;  // 2^64 mod bound
  std::uint64_t n = 0;
  for (;;) {
    const std::uint64_t x = bits(k + n);
    ++n;
    const __uint128_t m = static_cast<__uint128_t>(x) * bound;
    if (static_cast<std::uint64_t>(m) >= threshold) {
      if (used) *used = n;
      return static_cast<std::uint64_t>(m >> 64);
    }
  }
}

void shuffle_indices(std::vector<std::size_t>& idx, const CounterRng& rng) {
  std::uint64_t counter = 0;
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::uint64_t used = 0;
    const std::uint64_t j = rng.bounded(counter, i, &used);
    counter += used;
    std::swap(idx[i - 1], idx[j]);
  }
}

}  // namespace itmle
