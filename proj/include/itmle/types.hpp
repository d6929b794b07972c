#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace itmle {

// Input/configuration problems: the CLI maps these to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failures (non-convergence, separation, singularity): exit code 3.
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ObservedSample {
  Eigen::VectorXd y;                 // outcome; {0,1} unless continuous_outcome
  Eigen::VectorXi t;                 // treatment arm, each 0 or 1
  Eigen::MatrixXd x;                 // covariate matrix, n rows, p columns
  std::vector<std::string> x_names;  // column names, size p
  bool continuous_outcome = false;

  Eigen::Index n() const { return y.size(); }
  Eigen::Index p() const { return x.cols(); }
};

// Overlapping subgroup memberships: masks(i, j) is 1 when unit i belongs to
// subgroup j, 0 otherwise. share[j] is the exact empirical mask mean.
struct SubgroupFamily {
  Eigen::MatrixXd masks;  // n x d of {0,1}
  std::vector<std::string> labels;
  Eigen::VectorXd share;  // column means of masks

  Eigen::Index d() const { return masks.cols(); }
};

// Validates masks against the sample: every subgroup must be non-empty and
// contain units from both treatment arms. Fills in shares.
SubgroupFamily make_family(const ObservedSample& sample, Eigen::MatrixXd masks,
                           std::vector<std::string> labels);

enum class EffectKind { Risk, Ard, Rr, Or };

const char* effect_name(EffectKind e);
EffectKind effect_from_name(const std::string& name);

struct EstimationConfig {
  int max_iterations = 20;          // targeting iteration cap
  double score_tolerance = 1e-6;    // stop when the score norm falls below this
  double gamma_tolerance = 1e-4;    // stop when the step coefficient is this small (0 disables)
  double propensity_floor = 1e-3;   // propensities clipped to [floor, 1-floor]
  double outcome_clip = 1e-6;       // outcome probabilities clipped to [clip, 1-clip]
  double alpha = 0.05;              // simultaneous error budget q
  std::int64_t mc_draws = 200000;   // draws for the simultaneous quantile
  int folds = 1;                    // 1 = no cross-fitting
  std::uint64_t seed = 1;
  int threads = 1;

  void validate() const;
};

}  // namespace itmle
