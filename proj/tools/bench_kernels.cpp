// Timing harness for the OpenMP kernels against their serial twins.
//
// Both kernels draw every variate as a pure function of (seed, stream,
// counter) and combine partial results in a fixed order, so the parallel
// path must reproduce the serial path bit for bit; this harness verifies
// that equality and then reports wall times.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>

#include "itmle/inference.hpp"
#include "itmle/rng.hpp"
#include "itmle/simulation.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

double time_of(const std::function<void()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  body();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
  int threads = 4;
  for (int i = 1; i + 1 < argc; i += 2)
    if (std::strcmp(argv[i], "--threads") == 0) threads = std::atoi(argv[i + 1]);
#ifdef _OPENMP
  omp_set_num_threads(threads);
  std::printf("openmp: yes, threads=%d\n", threads);
#else
  std::printf("openmp: no (serial build), threads flag ignored\n");
#endif

  // Kernel 1: simultaneous critical value on a correlated 10-dimensional
  // covariance (random SPD matrix), 2e6 draws.
  {
    const itmle::CounterRng rng(7, "bench-sigma");
    const Eigen::Index d = 10;
    Eigen::MatrixXd a(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j)
        a(i, j) = rng.normal(static_cast<std::uint64_t>(i * d + j));
    const Eigen::MatrixXd sigma =
        a * a.transpose() + Eigen::MatrixXd::Identity(d, d);
    const std::int64_t draws = 2000000;

    itmle::KappaEstimate serial;
    itmle::KappaEstimate parallel;
    const double ts = time_of([&] { serial = itmle::simultaneous_kappa_serial(sigma, 0.05, draws, 11); });
    const double tp = time_of([&] { parallel = itmle::simultaneous_kappa(sigma, 0.05, draws, 11, true); });
    std::printf("kernel=kappa d=%d draws=%lld serial_s=%.3f parallel_s=%.3f speedup=%.2f match=%s\n",
                static_cast<int>(d), static_cast<long long>(draws), ts, tp,
                tp > 0 ? ts / tp : 0.0, serial.kappa == parallel.kappa ? "bitwise" : "MISMATCH");
    if (serial.kappa != parallel.kappa) return 1;
  }

  // Kernel 2: ground-truth oracle, 2e6 draws, 4 overlapping subgroups.
  {
    const std::int64_t draws = 2000000;
    itmle::TrueParams serial;
    itmle::TrueParams parallel;
    const double ts = time_of([&] {
      serial = itmle::true_parameters(itmle::DesignKind::Alternative, 4, draws, 17, "", false);
    });
    const double tp = time_of([&] {
      parallel = itmle::true_parameters(itmle::DesignKind::Alternative, 4, draws, 17, "", true);
    });
    const bool match = (serial.alpha1.array() == parallel.alpha1.array()).all() &&
                       (serial.alpha0.array() == parallel.alpha0.array()).all() &&
                       (serial.share.array() == parallel.share.array()).all();
    std::printf("kernel=oracle d=4 draws=%lld serial_s=%.3f parallel_s=%.3f speedup=%.2f match=%s\n",
                static_cast<long long>(draws), ts, tp, tp > 0 ? ts / tp : 0.0,
                match ? "bitwise" : "MISMATCH");
    if (!match) return 1;
  }
  return 0;
}
