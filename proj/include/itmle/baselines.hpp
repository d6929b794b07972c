#pragma once

#include <string>

#include "itmle/nuisance.hpp"
#include "itmle/targeting.hpp"
#include "itmle/types.hpp"

namespace itmle {

// Comparison estimators for the per-subgroup arm means E[Y(arm) | A_j].
// Each returns a point estimate with a matching n x d influence matrix so the
// same interval machinery applies; `degenerate` marks subgroups whose variance
// model collapsed to zero (constant influence rows), where intervals are not
// meaningful.
struct BaselineEstimate {
  std::string method;  // dr | glm | ipw | tmle-single
  Eigen::VectorXd alpha;
  Eigen::MatrixXd phi;  // n x d influence rows
  Eigen::MatrixXd sigma;
  std::vector<bool> degenerate;  // per subgroup: sigma_jj == 0
  double seconds = 0.0;          // wall time of the estimator body
};

// Doubly robust (one-step / AIPW): subgroup mean of w*(y - p) + p with
// w = 1(t = arm) / e_arm; variance from the estimating-equation influence rows.
BaselineEstimate estimate_dr(const ObservedSample& sample, const SubgroupFamily& family, int arm,
                             const NuisanceFit& nuisance);

// Outcome-regression plug-in: subgroup mean of the fitted p_arm; influence
// rows treat the fit as fixed (within-subgroup dispersion of p_arm).
BaselineEstimate estimate_glm(const ObservedSample& sample, const SubgroupFamily& family, int arm,
                              const NuisanceFit& nuisance);

// Inverse-propensity weighting: subgroup mean of w * y; influence rows from
// the weighted terms.
BaselineEstimate estimate_ipw(const ObservedSample& sample, const SubgroupFamily& family, int arm,
                              const NuisanceFit& nuisance);

// Classical one-group TMLE run separately per subgroup, refitting both
// nuisances inside the subgroup each time. Influence rows are the one-group
// curves evaluated at the subgroup's own fits.
BaselineEstimate estimate_tmle_single(const ObservedSample& sample, const SubgroupFamily& family,
                                      int arm, const LearnerSpec& propensity_learner,
                                      const LearnerSpec& outcome_learner,
                                      const EstimationConfig& config);

}  // namespace itmle
