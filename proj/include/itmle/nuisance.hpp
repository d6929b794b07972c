#pragma once

#include <string>

#include "itmle/logistic.hpp"
#include "itmle/types.hpp"

namespace itmle {

// Initial-stage fits shared by every estimator: the propensity e1(x) = P(T=1|X=x)
// and the arm-wise outcome regressions p1(x), p0(x) = P(Y=1|T=t, X=x), each
// predicted for every unit and clipped to the configured ranges.
struct NuisanceFit {
  Eigen::VectorXd e1;  // clipped to [floor, 1-floor]
  Eigen::VectorXd p1;  // clipped to [clip, 1-clip]
  Eigen::VectorXd p0;  // clipped to [clip, 1-clip]
  std::string propensity_tag;
  std::string outcome_tag;

  Eigen::VectorXd arm_propensity(int arm) const {
    return arm == 1 ? e1 : Eigen::VectorXd(Eigen::VectorXd::Ones(e1.size()) - e1);
  }
  const Eigen::VectorXd& arm_outcome(int arm) const { return arm == 1 ? p1 : p0; }
};

// Fits the propensity on all rows and each outcome regression on its arm's rows,
// then predicts on `predict_sample` (pass the training sample itself for the
// plain, non-cross-fit pipeline).
NuisanceFit fit_nuisance(const ObservedSample& train, const ObservedSample& predict_sample,
                         const LearnerSpec& propensity_learner, const LearnerSpec& outcome_learner,
                         const EstimationConfig& config);

inline NuisanceFit fit_nuisance(const ObservedSample& sample, const LearnerSpec& propensity_learner,
                                const LearnerSpec& outcome_learner,
                                const EstimationConfig& config) {
  return fit_nuisance(sample, sample, propensity_learner, outcome_learner, config);
}

}  // namespace itmle
