#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "itmle/types.hpp"

namespace itmle {

// Per-unit influence values, one column per subgroup.
struct EifMatrix {
  Eigen::MatrixXd phi;    // n x d
  Eigen::VectorXd means;  // column means (diagnostic; ~0 at targeted estimates)
};

// Arm-mean influence: phi_ij = mask_ij/share_j * [ (y_i - p_i) 1(t_i=arm)/e_i
//                                                  + p_i - alpha_j ].
EifMatrix eif_risk(const ObservedSample& sample, const SubgroupFamily& family, int arm,
                   const Eigen::VectorXd& e_arm, const Eigen::VectorXd& p,
                   const Eigen::VectorXd& alpha);

// Contrast influence for ARD / RR / OR, evaluated per unit from the two arm
// curves and the two arm means (the delta-method combination with exact
// coefficients; see eif_jacobian for the weights).
EifMatrix eif_effect(const ObservedSample& sample, const SubgroupFamily& family,
                     const Eigen::VectorXd& e1, const Eigen::VectorXd& p1,
                     const Eigen::VectorXd& p0, const Eigen::VectorXd& alpha1,
                     const Eigen::VectorXd& alpha0, EffectKind kind);

// Delta-method weights (d/d alpha1, d/d alpha0) of the effect map at one pair.
void eif_jacobian(EffectKind kind, double a1, double a0, double* j1, double* j0);

// Sigma_hat = phi' phi / n (uncentered second moment). Throws SolverError when
// a diagonal entry is zero (degenerate influence column).
Eigen::MatrixXd covariance(const EifMatrix& eif);

// Empirical (1-q) quantile of max_j |Z_j| with Z ~ N(0, correlation(sigma)),
// by Monte Carlo with counter-indexed draws (identical for any shard layout).
// `parallel` only toggles OpenMP over the draw blocks; results are bit-equal.
struct KappaEstimate {
  double kappa = 0.0;
  double jitter = 0.0;  // diagonal jitter the Cholesky needed (0 when PD)
  std::int64_t draws = 0;
  std::uint64_t seed = 0;
};

KappaEstimate simultaneous_kappa(const Eigen::MatrixXd& sigma, double q, std::int64_t draws,
                                 std::uint64_t seed, bool parallel = true);

// Serial reference implementation kept for testing: identical arithmetic,
// no OpenMP region.
KappaEstimate simultaneous_kappa_serial(const Eigen::MatrixXd& sigma, double q,
                                        std::int64_t draws, std::uint64_t seed);

struct IntervalSet {
  Eigen::VectorXd point;
  Eigen::VectorXd se;               // sqrt(sigma_jj / n)
  Eigen::VectorXd pointwise_lo;     // point -+ z_{1-q/2} * se
  Eigen::VectorXd pointwise_hi;
  Eigen::VectorXd simultaneous_lo;  // point -+ kappa * se
  Eigen::VectorXd simultaneous_hi;
  double kappa = 0.0;
  double kappa_raw = 0.0;  // empirical quantile before the pointwise floor
  double z_pointwise = 0.0;
  double q = 0.0;
  std::int64_t draws = 0;
  std::uint64_t seed = 0;
  double jitter = 0.0;
};

// Builds both interval families from a point vector and its covariance.
// kappa is floored at the pointwise critical value so that every simultaneous
// interval contains its pointwise counterpart even under Monte Carlo noise.
IntervalSet build_intervals(const Eigen::VectorXd& point, const Eigen::MatrixXd& sigma,
                            Eigen::Index n, double q, std::int64_t draws, std::uint64_t seed,
                            bool parallel = true);

}  // namespace itmle
