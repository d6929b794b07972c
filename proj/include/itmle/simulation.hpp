#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "itmle/types.hpp"

namespace itmle {

// Synthetic observational designs. All share the covariate law
// X ~ N(0, S) with S_ij = 0.5^|i-j| (5 columns) and the treatment law
// T ~ Bernoulli(expit(x1 - 0.5 x2 + 0.25 x3 + 0.1 x4)).
//   Main:            Y ~ Bernoulli(expit(21 + t + 27.4 x1 + 13.7 x2 + 13.7 x3 + 13.7 x4))
//   Alternative:     Y ~ Bernoulli(expit(t + x1 + x2 + x3 + x4))
//   AlternativeNull: Alternative with the treatment coefficient set to 0
enum class DesignKind { Main, Alternative, AlternativeNull };

const char* design_name(DesignKind kind);
DesignKind design_from_name(const std::string& name);

double design_propensity(const Eigen::RowVectorXd& x);
double design_outcome(DesignKind kind, const Eigen::RowVectorXd& x, int t);

// Draws a sample from the design. Every variate is a pure function of
// (seed, unit index), so any prefix or subset of units is reproducible.
ObservedSample generate_design(DesignKind kind, Eigen::Index n, std::uint64_t seed);

// Subgroup families defined by population thresholds (so the same definitions
// apply to observed samples and to oracle draws):
//   d = 1:  the whole sample;
//   d = 4:  x1 > q10; q10 < x2 < q90; x3 + x4 > -2; all units
//           (with q10/q90 the standard-normal 10%/90% quantiles);
//   d = 10: decile bins of x1 between consecutive N(0,1) decile thresholds,
//           open at interior boundaries, unbounded at the ends.
Eigen::MatrixXd population_masks(int d, const Eigen::MatrixXd& x);
std::vector<std::string> population_labels(int d);
const char* population_family_name(int d);
SubgroupFamily design_family(const ObservedSample& sample, int d);

// Ground truth alpha_{t,j} = E[p_t(X) | X in A_j], integrated by Monte Carlo
// under the design's covariate law. Cached to a JSON file keyed by
// (design, family, draws, seed) when cache_dir is non-empty.
struct TrueParams {
  std::string design;
  std::string family;
  std::vector<std::string> labels;
  Eigen::VectorXd alpha1;
  Eigen::VectorXd alpha0;
  Eigen::VectorXd share;  // P(A_j) estimates
  std::int64_t draws = 0;
  std::uint64_t seed = 0;
  double max_mc_se = 0.0;  // worst per-entry Monte Carlo standard error
  bool from_cache = false;
};

TrueParams true_parameters(DesignKind kind, int d, std::int64_t draws, std::uint64_t seed,
                           const std::string& cache_dir, bool parallel);

// ---------------------------------------------------------------------------
// Monte Carlo harness
// ---------------------------------------------------------------------------

struct MonteCarloConfig {
  DesignKind design = DesignKind::Alternative;
  int d = 4;
  std::vector<Eigen::Index> sizes = {500};
  int replications = 200;
  // itmle | cv-itmle | dr | glm | ipw | tmle-single, plus the test-only
  // "oracle" estimator that returns the truth with unit-variance intervals.
  std::vector<std::string> estimators = {"itmle"};
  std::string misspecification = "none";  // none | propensity | outcome
  EstimationConfig estimation;
  int arm = 1;
  double ridge = 1e-3;  // ridge strength for the logistic learners
  std::int64_t truth_draws = 10000000;
  std::uint64_t truth_seed = 20240915;
  std::string truth_cache_dir;  // empty = no cache file
  bool parallel = false;        // drives the OpenMP kernels inside
};

// One subgroup of one estimator in one replication, as persisted to CSV.
struct ReplicationRow {
  Eigen::Index n = 0;
  int replication = 0;
  std::string estimator;
  std::string subgroup;
  double estimate = 0.0;
  double lo = 0.0;  // simultaneous interval
  double hi = 0.0;
  int covered = 0;
};

struct EstimatorMetrics {
  std::string estimator;
  Eigen::Index n = 0;
  Eigen::VectorXd bias;                 // per subgroup, mean(estimate) - truth
  Eigen::VectorXd sd;                   // per subgroup, sample sd of estimates
  Eigen::VectorXd pointwise_coverage;   // per subgroup
  double scaled_bias = 0.0;             // sqrt(n) * sum_j |bias_j|
  double scaled_sd = 0.0;               // sqrt(n) * sum_j sd_j
  double fwer = 0.0;                    // fraction of reps with >=1 simultaneous miss
  double fwer_mc_se = 0.0;              // sqrt(fwer (1-fwer) / completed)
  int completed = 0;
  int failures = 0;
  double estimator_seconds = 0.0;  // summed point-estimation wall time
};

struct SimulationReport {
  TrueParams truth;
  std::vector<EstimatorMetrics> metrics;     // one per (size, estimator)
  std::vector<ReplicationRow> rows;          // sorted by (n, replication, estimator, subgroup)
  std::vector<std::string> failure_messages;  // first few, labeled
  int replication_failures = 0;               // whole replications lost (family degenerate)
};

// Runs `replications` independent draws per sample size, applies every
// requested estimator, and aggregates bias/SD/FWER against the oracle truth.
// Deterministic for fixed config: per-replication streams are derived by
// counter and aggregation folds over replications in index order.
SimulationReport run_monte_carlo(const MonteCarloConfig& config);

}  // namespace itmle
