#include "itmle/logistic.hpp"

#include <cmath>
#include <sstream>

#include "itmle/stats.hpp"

namespace itmle {

std::string LearnerSpec::tag() const {
  if (kind == LearnerKind::Constant) return "constant";
  std::ostringstream out;
  out << "logistic";
  if (regularization > 0) out << "(ridge=" << regularization << ")";
  return out.str();
}

double LogisticFit::predict_one(const Eigen::RowVectorXd& features) const {
  double eta = coef[0];
  for (Eigen::Index j = 0; j < features.size(); ++j) eta += coef[j + 1] * features[j];
  return expit(eta);
}

Eigen::VectorXd LogisticFit::predict(const Eigen::MatrixXd& features) const {
  Eigen::VectorXd eta =
      Eigen::VectorXd::Constant(features.rows(), coef[0]) + features * coef.tail(coef.size() - 1);
  return eta.unaryExpr([](double e) { return expit(e); });
}

namespace {

// Penalized Bernoulli log-likelihood (intercept unpenalized).
double penalized_loglik(const Eigen::VectorXd& eta, const Eigen::VectorXd& y, double lambda,
                        const Eigen::VectorXd& coef) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) ll += y[i] * eta[i] - log1pexp(eta[i]);
  if (lambda > 0) ll -= 0.5 * lambda * coef.tail(coef.size() - 1).squaredNorm();
  return ll;
}

}  // namespace

LogisticFit fit_logistic(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets,
                         const LearnerSpec& spec) {
  const Eigen::Index n = targets.size();
  if (features.rows() != n) throw ValidationError("fit_logistic: feature/target row mismatch");
  if (n == 0) throw ValidationError("fit_logistic: empty training set");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (targets[i] != 0.0 && targets[i] != 1.0) {
      throw ValidationError("fit_logistic: targets must be 0/1");
    }
  }

  const double ybar = targets.mean();
  if (spec.kind == LearnerKind::Constant) {
    LogisticFit fit;
    fit.coef = Eigen::VectorXd::Zero(1 + features.cols());
    if (ybar <= 0.0 || ybar >= 1.0) {
      // Degenerate rate: pin the intercept at the clip horizon so predictions
      // stay finite; downstream clipping handles the rest.
      fit.coef[0] = ybar <= 0.0 ? logit(1e-12) : logit(1.0 - 1e-12);
    } else {
      fit.coef[0] = logit(ybar);
    }
    return fit;
  }

  const Eigen::Index p = features.cols() + 1;
  if (spec.regularization == 0.0 && (ybar == 0.0 || ybar == 1.0)) {
    throw SolverError(
        "fit_logistic: all targets identical; the unpenalized likelihood is unbounded "
        "(perfect separation) - use regularization or the constant learner");
  }
  if (spec.regularization == 0.0 && n <= features.cols()) {
    throw SolverError("fit_logistic: more coefficients than rows without regularization");
  }

  Eigen::MatrixXd design(n, p);
  design.col(0).setOnes();
  design.rightCols(features.cols()) = features;

  Eigen::VectorXd coef = Eigen::VectorXd::Zero(p);
  coef[0] = logit(clip(ybar, 1e-6, 1.0 - 1e-6));
  Eigen::VectorXd eta = design * coef;
  double ll = penalized_loglik(eta, targets, spec.regularization, coef);

  LogisticFit fit;
  Eigen::VectorXd probs(n), score(p);
  for (int iter = 1; iter <= spec.max_iterations; ++iter) {
    for (Eigen::Index i = 0; i < n; ++i) probs[i] = expit(eta[i]);
    score = design.transpose() * (targets - probs);
    if (spec.regularization > 0) {
      score.tail(p - 1) -= spec.regularization * coef.tail(p - 1);
    }
    const double score_inf = score.cwiseAbs().maxCoeff();
    fit.iterations = iter - 1;
    fit.score_norm = score_inf;
    if (score_inf <= spec.tolerance) {
      fit.coef = coef;
      return fit;
    }
    if (spec.regularization == 0.0 && eta.cwiseAbs().maxCoeff() > 30.0) {
      throw SolverError(
          "fit_logistic: fitted logits exceed 30 with the score still nonzero "
          "(perfect separation) - use regularization");
    }

    Eigen::MatrixXd hessian = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double w = std::max(probs[i] * (1.0 - probs[i]), 1e-12);
      hessian.noalias() += w * design.row(i).transpose() * design.row(i);
    }
    if (spec.regularization > 0) {
      for (Eigen::Index j = 1; j < p; ++j) hessian(j, j) += spec.regularization;
    }
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(hessian);
    if (ldlt.info() != Eigen::Success) {
      throw SolverError("fit_logistic: singular information matrix - use regularization");
    }
    const Eigen::VectorXd step = ldlt.solve(score);

    // Step-halving keeps the penalized log-likelihood non-decreasing.
    double scale = 1.0;
    bool improved = false;
    for (int h = 0; h < 60; ++h) {
      const Eigen::VectorXd cand = coef + scale * step;
      const Eigen::VectorXd cand_eta = design * cand;
      const double cand_ll = penalized_loglik(cand_eta, targets, spec.regularization, cand);
      if (cand_ll >= ll - 1e-14 * std::fabs(ll)) {
        coef = cand;
        eta = cand_eta;
        ll = cand_ll;
        improved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!improved) {
      // No ascent direction left at double precision: accept the stationary point.
      fit.coef = coef;
      return fit;
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) probs[i] = expit(eta[i]);
  score = design.transpose() * (targets - probs);
  if (spec.regularization > 0) score.tail(p - 1) -= spec.regularization * coef.tail(p - 1);
  if (score.cwiseAbs().maxCoeff() <= spec.tolerance * 100) {
    fit.coef = coef;
    fit.score_norm = score.cwiseAbs().maxCoeff();
    return fit;
  }
  throw SolverError("fit_logistic: IRLS failed to converge in " +
                    std::to_string(spec.max_iterations) + " iterations");
}

}  // namespace itmle
