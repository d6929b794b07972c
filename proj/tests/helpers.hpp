#pragma once

// Shared fixtures for the test suite: small synthetic samples with known
// generating mechanisms, built directly from counter streams so every test
// is reproducible without global state.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "itmle/rng.hpp"
#include "itmle/stats.hpp"
#include "itmle/types.hpp"

namespace helpers {

// Binary-outcome sample with iid standard normal covariates, a mildly
// covariate-dependent treatment, and a logistic outcome with treatment effect.
inline itmle::ObservedSample make_sample(Eigen::Index n, std::uint64_t seed, Eigen::Index p = 3) {
  itmle::CounterRng rng(seed, "test-sample");
  itmle::ObservedSample s;
  s.y.resize(n);
  s.t.resize(n);
  s.x.resize(n, p);
  for (Eigen::Index j = 0; j < p; ++j) s.x_names.push_back("x" + std::to_string(j + 1));
  std::uint64_t k = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) s.x(i, j) = rng.normal(k++);
    const double e = itmle::expit(0.4 * s.x(i, 0) - 0.2 * s.x(i, 1));
    s.t[i] = rng.bernoulli(k++, e) ? 1 : 0;
    const double mu =
        itmle::expit(-0.3 + 0.8 * s.t[i] + 0.9 * s.x(i, 0) - 0.5 * s.x(i, 1) + 0.3 * s.x(i, 2));
    s.y[i] = rng.bernoulli(k++, mu) ? 1.0 : 0.0;
  }
  return s;
}

// Continuous-outcome variant: same covariates/treatment, Gaussian outcome.
inline itmle::ObservedSample make_continuous_sample(Eigen::Index n, std::uint64_t seed,
                                                    Eigen::Index p = 3) {
  itmle::ObservedSample s = make_sample(n, seed, p);
  itmle::CounterRng rng(seed, "test-sample-cont");
  s.continuous_outcome = true;
  for (Eigen::Index i = 0; i < n; ++i) {
    s.y[i] = 1.5 * s.t[i] + s.x(i, 0) - 0.5 * s.x(i, 1) +
             0.8 * rng.normal(static_cast<std::uint64_t>(i));
  }
  return s;
}

// Overlapping three-subgroup family: everyone, x1 > 0, x2 < 0.5.
inline itmle::SubgroupFamily make_family3(const itmle::ObservedSample& s) {
  const Eigen::Index n = s.n();
  Eigen::MatrixXd masks = Eigen::MatrixXd::Zero(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    masks(i, 0) = 1.0;
    masks(i, 1) = s.x(i, 0) > 0.0 ? 1.0 : 0.0;
    masks(i, 2) = s.x(i, 1) < 0.5 ? 1.0 : 0.0;
  }
  return itmle::make_family(s, masks, {"all", "pos1", "low2"});
}

// Single whole-sample subgroup.
inline itmle::SubgroupFamily make_family_whole(const itmle::ObservedSample& s) {
  return itmle::make_family(s, Eigen::MatrixXd::Ones(s.n(), 1), {"all"});
}

inline double max_abs_diff(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

inline double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace helpers
