#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <vector>

#include "itmle/rng.hpp"

using itmle::CounterRng;
using itmle::derive_seed;
using itmle::fnv1a64;
using itmle::mix64;
using itmle::shuffle_indices;

TEST_CASE("fnv1a64 matches published test vectors") {
  // Reference values for the 64-bit FNV-1a parameters.
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("mix64 reproduces the splitmix64 reference sequence") {
  // mix64(x) = splitmix64 output for state x, so mix64(k * gamma) for
  // k = 0, 1, 2 walks the published sequence for seed 0.
  const std::uint64_t gamma = 0x9E3779B97F4A7C15ULL;
  CHECK(mix64(0) == 0xE220A8397B1DCDAFULL);
  CHECK(mix64(gamma) == 0x6E789E6AA1B965F4ULL);
  CHECK(mix64(gamma * 2) == 0x06C45D188009454FULL);
  std::set<std::uint64_t> outs;
  for (std::uint64_t i = 0; i < 4096; ++i) outs.insert(mix64(i));
  CHECK(outs.size() == 4096);  // no collisions on a contiguous block
}

TEST_CASE("draws are pure functions of (seed, stream, counter)") {
  CounterRng a(42, "stream", 3);
  CounterRng b(42, "stream", 3);
  for (std::uint64_t k : {0ULL, 1ULL, 17ULL, 1000000ULL, 0xffffffffULL}) {
    CHECK(a.bits(k) == b.bits(k));
    CHECK(a.uniform(k) == b.uniform(k));
    CHECK(a.normal(k) == b.normal(k));
  }
  // Repeated evaluation of the same counter never advances state.
  const double first = a.uniform(5);
  CHECK(a.uniform(5) == first);
  CHECK(a.uniform(5) == first);
}

TEST_CASE("distinct seeds, names, and indices give distinct streams") {
  CounterRng base(42, "stream", 0);
  CounterRng seed(43, "stream", 0);
  CounterRng name(42, "maerts", 0);
  CounterRng index(42, "stream", 1);
  int seed_diff = 0;
  int name_diff = 0;
  int index_diff = 0;
  for (std::uint64_t k = 0; k < 64; ++k) {
    seed_diff += base.bits(k) != seed.bits(k);
    name_diff += base.bits(k) != name.bits(k);
    index_diff += base.bits(k) != index.bits(k);
  }
  CHECK(seed_diff == 64);
  CHECK(name_diff == 64);
  CHECK(index_diff == 64);
}

TEST_CASE("derive_seed separates components and indices") {
  const std::uint64_t s = 20240915;
  CHECK(derive_seed(s, "truth-oracle", 0) != derive_seed(s, "replication-n500", 0));
  CHECK(derive_seed(s, "kappa", 0) != derive_seed(s, "kappa", 1));
  CHECK(derive_seed(s, "kappa", 2) == derive_seed(s, "kappa", 2));
}

TEST_CASE("uniforms live strictly inside (0,1) and pass moment checks") {
  CounterRng rng(7, "uniform-test");
  const int n = 200000;
  long double sum = 0.0L, sumsq = 0.0L;
  double lo = 1.0, hi = 0.0;
  for (int k = 0; k < n; ++k) {
    const double u = rng.uniform(static_cast<std::uint64_t>(k));
    CHECK(u > 0.0);
    CHECK(u < 1.0);
    sum += u;
    sumsq += u * u;
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  const double mean = static_cast<double>(sum / n);
  const double var = static_cast<double>(sumsq / n) - mean * mean;
  // MC standard error of the mean is ~0.00065.
  CHECK(mean == doctest::Approx(0.5).epsilon(0.01));
  CHECK(var == doctest::Approx(1.0 / 12.0).epsilon(0.02));
  CHECK(lo < 0.001);
  CHECK(hi > 0.999);
}

TEST_CASE("normals match N(0,1) moments and tail frequencies") {
  CounterRng rng(11, "normal-test");
  const int n = 200000;
  long double sum = 0.0L, sumsq = 0.0L, sumcube = 0.0L;
  int beyond196 = 0;
  for (int k = 0; k < n; ++k) {
    const double z = rng.normal(static_cast<std::uint64_t>(k));
    sum += z;
    sumsq += z * z;
    sumcube += z * z * z;
    if (std::fabs(z) > 1.959963984540054) ++beyond196;
  }
  const double mean = static_cast<double>(sum / n);
  const double var = static_cast<double>(sumsq / n) - mean * mean;
  const double skew = static_cast<double>(sumcube / n);
  CHECK(std::fabs(mean) < 0.01);
  CHECK(var == doctest::Approx(1.0).epsilon(0.02));
  CHECK(std::fabs(skew) < 0.03);
  CHECK(static_cast<double>(beyond196) / n == doctest::Approx(0.05).epsilon(0.08));
}

TEST_CASE("bounded draws are unbiased over small ranges and report counters used") {
  CounterRng rng(3, "bounded-test");
  const std::uint64_t bound = 6;
  std::vector<int> counts(bound, 0);
  std::uint64_t k = 0;
  const int n = 120000;
  for (int i = 0; i < n; ++i) {
    std::uint64_t used = 0;
    const std::uint64_t v = rng.bounded(k, bound, &used);
    CHECK(v < bound);
    CHECK(used >= 1);
    k += used;
    ++counts[static_cast<std::size_t>(v)];
  }
  for (std::uint64_t f = 0; f < bound; ++f) {
    CHECK(static_cast<double>(counts[f]) / n == doctest::Approx(1.0 / 6.0).epsilon(0.05));
  }
}

TEST_CASE("shuffle is a deterministic permutation, uniform over positions") {
  std::vector<std::size_t> idx(8);
  std::iota(idx.begin(), idx.end(), 0);
  CounterRng rng(99, "shuffle-test");
  shuffle_indices(idx, rng);
  std::vector<std::size_t> again(8);
  std::iota(again.begin(), again.end(), 0);
  shuffle_indices(again, rng);
  CHECK(idx == again);  // same stream, same permutation
  std::set<std::size_t> seen(idx.begin(), idx.end());
  CHECK(seen.size() == 8);  // a valid permutation

  // Element 0 should land in every slot with frequency ~1/8 across streams.
  const int trials = 20000;
  std::vector<int> slot(8, 0);
  for (int t = 0; t < trials; ++t) {
    std::vector<std::size_t> v(8);
    std::iota(v.begin(), v.end(), 0);
    CounterRng r(1234, "shuffle-freq", static_cast<std::uint64_t>(t));
    shuffle_indices(v, r);
    for (std::size_t pos = 0; pos < 8; ++pos) {
      if (v[pos] == 0) {
        ++slot[pos];
        break;
      }
    }
  }
  for (int pos = 0; pos < 8; ++pos) {
    CHECK(static_cast<double>(slot[pos]) / trials == doctest::Approx(0.125).epsilon(0.12));
  }
}

TEST_CASE("bernoulli respects its probability") {
  CounterRng rng(5, "bern-test");
  const int n = 100000;
  int hits = 0;
  for (int k = 0; k < n; ++k) hits += rng.bernoulli(static_cast<std::uint64_t>(k), 0.3);
  CHECK(static_cast<double>(hits) / n == doctest::Approx(0.3).epsilon(0.02));
}
