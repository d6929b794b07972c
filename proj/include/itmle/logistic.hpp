#pragma once

#include <Eigen/Dense>
#include <string>

#include "itmle/types.hpp"

namespace itmle {

enum class LearnerKind {
  Logistic,  // intercept + linear terms, ridge-penalized IRLS
  Constant,  // intercept only: fitted probability = target mean
};

struct LearnerSpec {
  LearnerKind kind = LearnerKind::Logistic;
  double regularization = 0.0;  // ridge strength on non-intercept coefficients
  int max_iterations = 100;
  double tolerance = 1e-10;  // max absolute penalized-score component at the solution

  std::string tag() const;
};

struct LogisticFit {
  Eigen::VectorXd coef;  // coef[0] = intercept, then one slope per feature column
  int iterations = 0;
  double score_norm = 0.0;  // max absolute penalized-score component

  double predict_one(const Eigen::RowVectorXd& features) const;
  Eigen::VectorXd predict(const Eigen::MatrixXd& features) const;
};

// Maximizes the (ridge-penalized) Bernoulli log-likelihood by damped IRLS.
// `features` excludes the intercept column; `targets` are 0/1. Throws
// SolverError on separation (unbounded likelihood with no penalty) or when the
// iteration cap is reached away from a stationary point.
LogisticFit fit_logistic(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets,
                         const LearnerSpec& spec);

}  // namespace itmle
