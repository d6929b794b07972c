#include "itmle/nuisance.hpp"

#include "itmle/stats.hpp"

namespace itmle {
namespace {

Eigen::MatrixXd arm_rows(const Eigen::MatrixXd& x, const Eigen::VectorXi& t, int arm,
                         Eigen::VectorXd* y_out, const Eigen::VectorXd& y) {
  const Eigen::Index count = (t.array() == arm).count();
  Eigen::MatrixXd xa(count, x.cols());
  y_out->resize(count);
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    if (t[i] == arm) {
      xa.row(r) = x.row(i);
      (*y_out)[r] = y[i];
      ++r;
    }
  }
  return xa;
}

Eigen::VectorXd clip_all(Eigen::VectorXd v, double lo, double hi) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = clip(v[i], lo, hi);
  return v;
}

}  // namespace

NuisanceFit fit_nuisance(const ObservedSample& train, const ObservedSample& predict_sample,
                         const LearnerSpec& propensity_learner, const LearnerSpec& outcome_learner,
                         const EstimationConfig& config) {
  config.validate();
  if (train.p() != predict_sample.p()) {
    throw ValidationError("fit_nuisance: train/predict covariate dimension mismatch");
  }
  if ((train.t.array() == 1).count() == 0 || (train.t.array() == 0).count() == 0) {
    throw ValidationError("fit_nuisance: training rows must include both arms");
  }
  if (!train.continuous_outcome) {
    for (Eigen::Index i = 0; i < train.n(); ++i) {
      if (train.y[i] != 0.0 && train.y[i] != 1.0) {
        throw ValidationError("fit_nuisance: binary outcome expected; found other values");
      }
    }
  } else {
    throw ValidationError(
        "fit_nuisance: continuous outcomes use the dedicated linear targeting path");
  }

  NuisanceFit out;
  out.propensity_tag = propensity_learner.tag();
  out.outcome_tag = outcome_learner.tag();

  const LogisticFit efit = fit_logistic(train.x, train.t.cast<double>(), propensity_learner);
  out.e1 = clip_all(efit.predict(predict_sample.x), config.propensity_floor,
                    1.0 - config.propensity_floor);

  for (int arm : {0, 1}) {
    Eigen::VectorXd ya;
    const Eigen::MatrixXd xa = arm_rows(train.x, train.t, arm, &ya, train.y);
    const LogisticFit pfit = fit_logistic(xa, ya, outcome_learner);
    Eigen::VectorXd pred =
        clip_all(pfit.predict(predict_sample.x), config.outcome_clip, 1.0 - config.outcome_clip);
    (arm == 1 ? out.p1 : out.p0) = std::move(pred);
  }
  return out;
}

}  // namespace itmle
