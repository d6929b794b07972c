#include "itmle/targeting.hpp"

#include <cmath>
#include <sstream>

#include "itmle/stats.hpp"

namespace itmle {
namespace {

constexpr double kCoefCap = 1000.0;  // fluctuation coefficients beyond this mean separation

double offset_score(const Eigen::VectorXd& offsets, const Eigen::VectorXd& covariate,
                    const Eigen::VectorXd& y, double eps) {
  double u = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double s = covariate[i];
    if (s != 0.0) u += s * (y[i] - expit(offsets[i] + eps * s));
  }
  return u;
}

double offset_curvature(const Eigen::VectorXd& offsets, const Eigen::VectorXd& covariate,
                        double eps) {
  double w = 0.0;
  for (Eigen::Index i = 0; i < covariate.size(); ++i) {
    const double s = covariate[i];
    if (s != 0.0) {
      const double p = expit(offsets[i] + eps * s);
      w += s * s * p * (1.0 - p);
    }
  }
  return w;
}

void check_probability_vector(const Eigen::VectorXd& v, const char* what) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!(v[i] > 0.0 && v[i] < 1.0)) {
      throw ValidationError(std::string(what) + " must lie strictly in (0,1); offending entry " +
                            std::to_string(v[i]));
    }
  }
}

Eigen::VectorXd logits_of(const Eigen::VectorXd& p) {
  Eigen::VectorXd eta(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) eta[i] = logit(p[i]);
  return eta;
}

Eigen::VectorXd plugin_alpha(const Eigen::MatrixXd& masks, const Eigen::VectorXd& p) {
  const Eigen::Index d = masks.cols();
  Eigen::VectorXd alpha(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double members = masks.col(j).sum();
    alpha[j] = masks.col(j).dot(p) / members;
  }
  return alpha;
}

// Clever-covariate matrices: `indicated` zeroes off-arm rows (the regression
// weight), `evaluated` treats every row as if it sat in the arm (the update
// weight). Both are zero off-group.
void covariate_matrices(const ObservedSample& sample, const SubgroupFamily& family, int arm,
                        const Eigen::VectorXd& e_arm, Eigen::MatrixXd* indicated,
                        Eigen::MatrixXd* evaluated) {
  const Eigen::Index n = sample.n();
  const Eigen::Index d = family.d();
  if (arm != 0 && arm != 1) throw ValidationError("targeting: arm must be 0 or 1");
  if (e_arm.size() != n) throw ValidationError("targeting: propensity vector length mismatch");
  check_probability_vector(e_arm, "targeting: arm propensities");
  if (evaluated) evaluated->resize(n, d);
  indicated->resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double winv = 1.0 / e_arm[i];
    const bool in_arm = sample.t[i] == arm;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double base = family.masks(i, j) == 0.0 ? 0.0 : winv / family.share[j];
      if (evaluated) (*evaluated)(i, j) = base;
      (*indicated)(i, j) = in_arm ? base : 0.0;
    }
  }
}

}  // namespace

OffsetSolve solve_offset_logistic(const Eigen::VectorXd& offsets, const Eigen::VectorXd& covariate,
                                  const Eigen::VectorXd& y) {
  if (offsets.size() != y.size() || covariate.size() != y.size()) {
    throw ValidationError("solve_offset_logistic: input length mismatch");
  }
  OffsetSolve out;
  const double scale = covariate.cwiseAbs().sum();
  if (scale == 0.0) return out;
  const double tol = 1e-12 * scale;

  const double u0 = offset_score(offsets, covariate, y, 0.0);
  if (std::fabs(u0) <= tol) {
    out.score = u0;
    return out;
  }

  // Bracket the root of the (strictly decreasing) score.
  double lo, hi, u_hi;
  if (u0 > 0.0) {
    lo = 0.0;
    hi = 1.0;
    u_hi = offset_score(offsets, covariate, y, hi);
    while (u_hi > 0.0 && hi < kCoefCap) {
      lo = hi;
      hi = std::min(hi * 2.0, kCoefCap);
      u_hi = offset_score(offsets, covariate, y, hi);
    }
    if (u_hi > tol) {
      throw SolverError(
          "solve_offset_logistic: score stays positive out to coefficient 1000 "
          "(separation towards +inf)");
    }
  } else {
    hi = 0.0;
    lo = -1.0;
    double u_lo = offset_score(offsets, covariate, y, lo);
    while (u_lo < 0.0 && lo > -kCoefCap) {
      hi = lo;
      lo = std::max(lo * 2.0, -kCoefCap);
      u_lo = offset_score(offsets, covariate, y, lo);
    }
    if (u_lo < -tol) {
      throw SolverError(
          "solve_offset_logistic: score stays negative out to coefficient -1000 "
          "(separation towards -inf)");
    }
    u_hi = offset_score(offsets, covariate, y, hi);
  }

  // Safeguarded Newton: steps that leave the bracket fall back to bisection.
  double g = clip(0.0, lo, hi);
  double u = (g == 0.0) ? u0 : offset_score(offsets, covariate, y, g);
  for (int iter = 1; iter <= 200; ++iter) {
    const double w = offset_curvature(offsets, covariate, g);
    double candidate = w > 0.0 ? g + u / w : 0.5 * (lo + hi);
    if (!(candidate > lo && candidate < hi)) candidate = 0.5 * (lo + hi);
    const double u_cand = offset_score(offsets, covariate, y, candidate);
    out.epsilon = candidate;
    out.score = u_cand;
    out.iterations = iter;
    if (std::fabs(u_cand) <= tol) return out;
    if (u_cand > 0.0) {
      lo = candidate;
    } else {
      hi = candidate;
    }
    g = candidate;
    u = u_cand;
    if (hi - lo <= 1e-15 * (1.0 + std::fabs(lo) + std::fabs(hi))) return out;
  }
  return out;  // bracket is tiny by now; best point found
}

CleverCovariates build_normalized_covariate(const ObservedSample& sample,
                                            const SubgroupFamily& family, int arm,
                                            const Eigen::VectorXd& e_arm,
                                            const Eigen::VectorXd& p_current) {
  const Eigen::Index n = sample.n();
  if (p_current.size() != n) throw ValidationError("targeting: outcome vector length mismatch");
  CleverCovariates cc;
  Eigen::MatrixXd evaluated;
  covariate_matrices(sample, family, arm, e_arm, &cc.per_group, &evaluated);
  const Eigen::VectorXd residual = sample.y - p_current;
  cc.group_score_means = cc.per_group.transpose() * residual / static_cast<double>(n);
  cc.score_norm = cc.group_score_means.norm();
  if (cc.score_norm == 0.0) {
    cc.all_zero = true;
    cc.normalized = Eigen::VectorXd::Zero(n);
    cc.normalized_eval = Eigen::VectorXd::Zero(n);
    return cc;
  }
  const Eigen::VectorXd direction = cc.group_score_means / cc.score_norm;
  cc.normalized = cc.per_group * direction;
  cc.normalized_eval = evaluated * direction;
  return cc;
}

TargetedFit itmle_core(const ObservedSample& sample, const SubgroupFamily& family, int arm,
                       const Eigen::VectorXd& e_arm, const Eigen::VectorXd& p_init,
                       const EstimationConfig& config) {
  config.validate();
  check_probability_vector(p_init, "targeting: initial outcome probabilities");
  TargetedFit fit;
  Eigen::VectorXd eta = logits_of(p_init);
  Eigen::VectorXd p = p_init;
  for (int k = 0;; ++k) {
    const CleverCovariates cc = build_normalized_covariate(sample, family, arm, e_arm, p);
    fit.score_norm = cc.score_norm;
    fit.group_score_means = cc.group_score_means;
    if (cc.score_norm <= config.score_tolerance) {
      fit.converged = true;
      fit.stop_reason = "score_tolerance";
      break;
    }
    if (k >= config.max_iterations) {
      fit.stop_reason = "max_iterations";
      break;
    }
    const OffsetSolve step = solve_offset_logistic(eta, cc.normalized, sample.y);
    eta += step.epsilon * cc.normalized_eval;
    for (Eigen::Index i = 0; i < eta.size(); ++i) p[i] = expit(eta[i]);
    fit.gammas.push_back(step.epsilon);
    if (config.gamma_tolerance > 0.0 && std::fabs(step.epsilon) <= config.gamma_tolerance) {
      const CleverCovariates after = build_normalized_covariate(sample, family, arm, e_arm, p);
      fit.score_norm = after.score_norm;
      fit.group_score_means = after.group_score_means;
      fit.converged = after.score_norm <= config.score_tolerance;
      fit.stop_reason = "gamma_tolerance";
      break;
    }
  }
  fit.iterations = static_cast<int>(fit.gammas.size());
  fit.p_updated = std::move(p);
  fit.alpha = plugin_alpha(family.masks, fit.p_updated);
  return fit;
}

TargetedFit itmle(const ObservedSample& sample, const SubgroupFamily& family, int arm,
                  const NuisanceFit& nuisance, const EstimationConfig& config) {
  return itmle_core(sample, family, arm, nuisance.arm_propensity(arm), nuisance.arm_outcome(arm),
                    config);
}

TargetedFit itmle_continuous(const ObservedSample& sample, const SubgroupFamily& family, int arm,
                             const Eigen::VectorXd& e_arm, const Eigen::VectorXd& p_init,
                             const EstimationConfig& config) {
  config.validate();
  TargetedFit fit;
  Eigen::VectorXd p = p_init;
  for (int k = 0;; ++k) {
    const CleverCovariates cc = build_normalized_covariate(sample, family, arm, e_arm, p);
    fit.score_norm = cc.score_norm;
    fit.group_score_means = cc.group_score_means;
    if (cc.score_norm <= config.score_tolerance) {
      fit.converged = true;
      fit.stop_reason = "score_tolerance";
      break;
    }
    if (k >= config.max_iterations) {
      fit.stop_reason = "max_iterations";
      break;
    }
    const double denom = cc.normalized.squaredNorm();
    if (denom == 0.0) {
      throw SolverError(
          "itmle_continuous: zero fluctuation covariate with unconverged residuals "
          "(internal inconsistency)");
    }
    const double gamma = cc.normalized.dot(sample.y - p) / denom;
    p += gamma * cc.normalized_eval;
    fit.gammas.push_back(gamma);
    if (config.gamma_tolerance > 0.0 && std::fabs(gamma) <= config.gamma_tolerance) {
      const CleverCovariates after = build_normalized_covariate(sample, family, arm, e_arm, p);
      fit.score_norm = after.score_norm;
      fit.group_score_means = after.group_score_means;
      fit.converged = after.score_norm <= config.score_tolerance;
      fit.stop_reason = "gamma_tolerance";
      break;
    }
  }
  fit.iterations = static_cast<int>(fit.gammas.size());
  fit.p_updated = std::move(p);
  fit.alpha = plugin_alpha(family.masks, fit.p_updated);
  return fit;
}

SingleTarget classical_single_tmle_core(const ObservedSample& sample, const Eigen::VectorXd& mask,
                                        double share, int arm, const Eigen::VectorXd& e_arm,
                                        const Eigen::VectorXd& p_init) {
  const Eigen::Index n = sample.n();
  if (mask.size() != n) throw ValidationError("classical_single_tmle: mask length mismatch");
  if (!(share > 0.0)) throw ValidationError("classical_single_tmle: subgroup share must be > 0");
  check_probability_vector(p_init, "classical_single_tmle: initial outcome probabilities");
  check_probability_vector(e_arm, "classical_single_tmle: arm propensities");
  Eigen::VectorXd s(n), s_eval(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double base = mask[i] == 0.0 ? 0.0 : 1.0 / (share * e_arm[i]);
    s_eval[i] = base;
    s[i] = (sample.t[i] == arm) ? base : 0.0;
  }
  if ((s.array() != 0.0).count() == 0) {
    throw ValidationError("classical_single_tmle: the subgroup has no units in the target arm");
  }
  const Eigen::VectorXd eta = logits_of(p_init);
  const OffsetSolve step = solve_offset_logistic(eta, s, sample.y);
  SingleTarget out;
  out.epsilon = step.epsilon;
  out.p_updated.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.p_updated[i] = expit(eta[i] + step.epsilon * s_eval[i]);
  }
  out.alpha = mask.dot(out.p_updated) / mask.sum();
  out.score_mean = offset_score(eta, s, sample.y, step.epsilon) / static_cast<double>(n);
  return out;
}

SingleTarget classical_single_tmle(const ObservedSample& sample, const SubgroupFamily& family,
                                   Eigen::Index group, int arm, const NuisanceFit& nuisance) {
  if (group < 0 || group >= family.d()) {
    throw ValidationError("classical_single_tmle: subgroup index out of range");
  }
  return classical_single_tmle_core(sample, family.masks.col(group), family.share[group], arm,
                                    nuisance.arm_propensity(arm), nuisance.arm_outcome(arm));
}

OneStep onestep_multi(const ObservedSample& sample, const SubgroupFamily& family, int arm,
                      const Eigen::VectorXd& e_arm, const Eigen::VectorXd& p_init) {
  const Eigen::Index n = sample.n();
  const Eigen::Index d = family.d();
  check_probability_vector(p_init, "onestep_multi: initial outcome probabilities");
  Eigen::MatrixXd s, s_eval;
  covariate_matrices(sample, family, arm, e_arm, &s, &s_eval);
  const Eigen::VectorXd eta0 = logits_of(p_init);
  const Eigen::VectorXd& y = sample.y;

  // Column scales set the convergence tolerance for each first-order condition.
  Eigen::VectorXd col_scale = s.cwiseAbs().colwise().sum();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (col_scale[j] == 0.0) {
      throw ValidationError("onestep_multi: subgroup '" + family.labels[static_cast<std::size_t>(j)] +
                            "' has no units in the target arm");
    }
  }

  auto loglik = [&](const Eigen::VectorXd& eps) {
    const Eigen::VectorXd eta = eta0 + s * eps;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) ll += y[i] * eta[i] - log1pexp(eta[i]);
    return ll;
  };

  Eigen::VectorXd eps = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd eta = eta0;
  double ll = loglik(eps);
  OneStep out;
  bool converged = false;
  for (int iter = 1; iter <= 100; ++iter) {
    Eigen::VectorXd probs(n);
    for (Eigen::Index i = 0; i < n; ++i) probs[i] = expit(eta[i]);
    const Eigen::VectorXd grad = s.transpose() * (y - probs);
    bool small = true;
    for (Eigen::Index j = 0; j < d; ++j) {
      if (std::fabs(grad[j]) > 1e-12 * col_scale[j]) small = false;
    }
    out.iterations = iter - 1;
    if (small) {
      converged = true;
      break;
    }
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(d, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double w = probs[i] * (1.0 - probs[i]);
      if (w > 0.0 && s.row(i).cwiseAbs().sum() > 0.0) {
        hess.noalias() += w * s.row(i).transpose() * s.row(i);
      }
    }
    // Detect linearly dependent clever covariates before trusting the solve.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(hess);
    const double max_ev = eig.eigenvalues().maxCoeff();
    if (eig.eigenvalues().minCoeff() <= 1e-11 * std::max(max_ev, 1.0)) {
      const Eigen::VectorXd null_dir = eig.eigenvectors().col(0);
      std::ostringstream msg;
      msg << "onestep_multi: singular fluctuation design; dependent subgroups:";
      const double top = null_dir.cwiseAbs().maxCoeff();
      for (Eigen::Index j = 0; j < d; ++j) {
        if (std::fabs(null_dir[j]) > 1e-3 * top) {
          msg << " '" << family.labels[static_cast<std::size_t>(j)] << "'";
        }
      }
      throw SolverError(msg.str());
    }
    const Eigen::VectorXd step = eig.eigenvectors() *
                                 (eig.eigenvectors().transpose() * grad).cwiseQuotient(
                                     eig.eigenvalues());
    double scale = 1.0;
    bool improved = false;
    for (int h = 0; h < 60; ++h) {
      const Eigen::VectorXd cand = eps + scale * step;
      const double cand_ll = loglik(cand);
      if (cand_ll >= ll - 1e-14 * std::fabs(ll)) {
        eps = cand;
        eta = eta0 + s * eps;
        ll = cand_ll;
        improved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!improved) break;  // stationary at double precision
    if (eps.cwiseAbs().maxCoeff() > kCoefCap) {
      Eigen::Index worst;
      eps.cwiseAbs().maxCoeff(&worst);
      throw SolverError("onestep_multi: coefficient for subgroup '" +
                        family.labels[static_cast<std::size_t>(worst)] +
                        "' exceeds 1000 (separation)");
    }
  }
  if (!converged) {
    // Accept a stationary-at-precision point only if the conditions are tiny.
    Eigen::VectorXd probs(n);
    for (Eigen::Index i = 0; i < n; ++i) probs[i] = expit(eta[i]);
    const Eigen::VectorXd grad = s.transpose() * (y - probs);
    for (Eigen::Index j = 0; j < d; ++j) {
      if (std::fabs(grad[j]) > 1e-9 * col_scale[j]) {
        throw SolverError("onestep_multi: Newton failed to satisfy the first-order conditions");
      }
    }
  }

  out.epsilons = eps;
  out.p_joint.resize(n);
  const Eigen::VectorXd joint_shift = s_eval * eps;
  for (Eigen::Index i = 0; i < n; ++i) out.p_joint[i] = expit(eta0[i] + joint_shift[i]);
  out.alpha.resize(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    double sum = 0.0, members = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (family.masks(i, j) != 0.0) {
        sum += expit(eta0[i] + eps[j] * s_eval(i, j));
        members += 1.0;
      }
    }
    out.alpha[j] = sum / members;
  }
  // Certificate: per-group residual score means at the joint update.
  Eigen::VectorXd residual(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    residual[i] = y[i] - expit(eta0[i] + s.row(i).dot(eps));
  }
  const Eigen::VectorXd means = s.transpose() * residual / static_cast<double>(n);
  out.score_norm = means.norm();
  return out;
}

JointTarget joint_target_effects(const ObservedSample& sample, const SubgroupFamily& family,
                                 const NuisanceFit& nuisance, const EstimationConfig& config) {
  config.validate();
  const Eigen::VectorXd e1 = nuisance.arm_propensity(1);
  const Eigen::VectorXd e0 = nuisance.arm_propensity(0);
  Eigen::VectorXd eta1 = logits_of(nuisance.p1);
  Eigen::VectorXd eta0 = logits_of(nuisance.p0);
  Eigen::VectorXd p1 = nuisance.p1;
  Eigen::VectorXd p0 = nuisance.p0;

  JointTarget out;
  std::vector<double> gammas1, gammas0;
  double final1 = 0.0, final0 = 0.0;
  Eigen::VectorXd means1, means0;
  for (int k = 0;; ++k) {
    const CleverCovariates cc1 = build_normalized_covariate(sample, family, 1, e1, p1);
    const CleverCovariates cc0 = build_normalized_covariate(sample, family, 0, e0, p0);
    final1 = cc1.score_norm;
    final0 = cc0.score_norm;
    means1 = cc1.group_score_means;
    means0 = cc0.group_score_means;
    out.score_norm = std::max(cc1.score_norm, cc0.score_norm);
    if (out.score_norm <= config.score_tolerance) {
      out.converged = true;
      out.stop_reason = "score_tolerance";
      break;
    }
    if (k >= config.max_iterations) {
      out.stop_reason = "max_iterations";
      break;
    }
    // The two covariates live on disjoint rows, so the bivariate Newton system
    // is block diagonal: each arm's coefficient solves its own scalar problem.
    double biggest_step = 0.0;
    if (cc1.score_norm > config.score_tolerance) {
      const OffsetSolve st = solve_offset_logistic(eta1, cc1.normalized, sample.y);
      eta1 += st.epsilon * cc1.normalized_eval;
      for (Eigen::Index i = 0; i < eta1.size(); ++i) p1[i] = expit(eta1[i]);
      gammas1.push_back(st.epsilon);
      biggest_step = std::max(biggest_step, std::fabs(st.epsilon));
    }
    if (cc0.score_norm > config.score_tolerance) {
      const OffsetSolve st = solve_offset_logistic(eta0, cc0.normalized, sample.y);
      eta0 += st.epsilon * cc0.normalized_eval;
      for (Eigen::Index i = 0; i < eta0.size(); ++i) p0[i] = expit(eta0[i]);
      gammas0.push_back(st.epsilon);
      biggest_step = std::max(biggest_step, std::fabs(st.epsilon));
    }
    if (config.gamma_tolerance > 0.0 && biggest_step <= config.gamma_tolerance) {
      const CleverCovariates a1 = build_normalized_covariate(sample, family, 1, e1, p1);
      const CleverCovariates a0 = build_normalized_covariate(sample, family, 0, e0, p0);
      final1 = a1.score_norm;
      final0 = a0.score_norm;
      means1 = a1.group_score_means;
      means0 = a0.group_score_means;
      out.score_norm = std::max(final1, final0);
      out.converged = out.score_norm <= config.score_tolerance;
      out.stop_reason = "gamma_tolerance";
      break;
    }
  }
  out.iterations = static_cast<int>(std::max(gammas1.size(), gammas0.size()));

  auto pack = [&](int arm, Eigen::VectorXd p, std::vector<double> gammas, double score,
                  Eigen::VectorXd means) {
    TargetedFit f;
    f.p_updated = std::move(p);
    f.alpha = plugin_alpha(family.masks, f.p_updated);
    f.gammas = std::move(gammas);
    f.iterations = static_cast<int>(f.gammas.size());
    f.score_norm = score;
    f.group_score_means = std::move(means);
    f.converged = score <= config.score_tolerance;
    f.stop_reason = out.stop_reason;
    (void)arm;
    return f;
  };
  out.arm1 = pack(1, std::move(p1), std::move(gammas1), final1, std::move(means1));
  out.arm0 = pack(0, std::move(p0), std::move(gammas0), final0, std::move(means0));
  return out;
}

Eigen::VectorXd effect_measures(const Eigen::VectorXd& alpha1, const Eigen::VectorXd& alpha0,
                                EffectKind kind) {
  if (alpha1.size() != alpha0.size()) {
    throw ValidationError("effect_measures: arm vectors differ in length");
  }
  const Eigen::Index d = alpha1.size();
  Eigen::VectorXd out(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double a1 = alpha1[j];
    const double a0 = alpha0[j];
    switch (kind) {
      case EffectKind::Risk:
        throw ValidationError("effect_measures: 'risk' is an arm mean, not a contrast");
      case EffectKind::Ard:
        out[j] = a1 - a0;
        break;
      case EffectKind::Rr:
        if (!(a0 > 0.0)) {
          throw ValidationError("effect_measures: risk ratio needs alpha0 > 0");
        }
        out[j] = a1 / a0;
        break;
      case EffectKind::Or:
        if (!(a0 > 0.0 && a0 < 1.0 && a1 > 0.0 && a1 < 1.0)) {
          throw ValidationError("effect_measures: odds ratio needs both arms strictly in (0,1)");
        }
        out[j] = (a1 / (1.0 - a1)) / (a0 / (1.0 - a0));
        break;
    }
  }
  return out;
}

PrimalSolve solve_primal(const ObservedSample& sample, const SubgroupFamily& family, int arm,
                         const Eigen::VectorXd& e_arm, const Eigen::VectorXd& p_current,
                         double delta) {
  if (delta < 0.0) throw ValidationError("solve_primal: delta must be >= 0");
  const Eigen::Index n = sample.n();
  const Eigen::Index d = family.d();
  check_probability_vector(p_current, "solve_primal: current outcome probabilities");
  Eigen::MatrixXd s;
  covariate_matrices(sample, family, arm, e_arm, &s, nullptr);
  const Eigen::VectorXd eta0 = logits_of(p_current);
  const Eigen::VectorXd& y = sample.y;

  PrimalSolve out;
  out.epsilon = Eigen::VectorXd::Zero(d);
  if (delta == 0.0) {
    out.on_boundary = true;
    return out;
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  auto objective = [&](const Eigen::VectorXd& eps) {  // mean negative log-likelihood
    const Eigen::VectorXd eta = eta0 + s * eps;
    double f = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) f += log1pexp(eta[i]) - y[i] * eta[i];
    return f * inv_n;
  };
  auto gradient = [&](const Eigen::VectorXd& eps) {
    const Eigen::VectorXd eta = eta0 + s * eps;
    Eigen::VectorXd probs(n);
    for (Eigen::Index i = 0; i < n; ++i) probs[i] = expit(eta[i]);
    return Eigen::VectorXd(-inv_n * (s.transpose() * (y - probs)));
  };
  auto hessian = [&](const Eigen::VectorXd& eps) {
    const Eigen::VectorXd eta = eta0 + s * eps;
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(d, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (s.row(i).cwiseAbs().sum() == 0.0) continue;
      const double p = expit(eta[i]);
      h.noalias() += (p * (1.0 - p) * inv_n) * s.row(i).transpose() * s.row(i);
    }
    return h;
  };
  auto project = [&](Eigen::VectorXd eps) {
    const double norm = eps.norm();
    if (norm > delta) eps *= delta / norm;
    return eps;
  };
  auto kkt_residual = [&](const Eigen::VectorXd& eps, const Eigen::VectorXd& grad) {
    const double norm = eps.norm();
    if (norm < delta * (1.0 - 1e-9)) return grad.norm();
    if (norm == 0.0) return grad.norm();
    const Eigen::VectorXd unit = eps / norm;
    const double radial = grad.dot(unit);
    const Eigen::VectorXd tangential = grad - radial * unit;
    return std::sqrt(tangential.squaredNorm() +
                     (radial > 0.0 ? radial * radial : 0.0));
  };

  const double tol = 1e-10 * std::max(1.0, gradient(out.epsilon).norm());
  double f = objective(out.epsilon);
  for (int iter = 1; iter <= 200; ++iter) {
    const Eigen::VectorXd grad = gradient(out.epsilon);
    out.kkt_residual = kkt_residual(out.epsilon, grad);
    out.iterations = iter - 1;
    if (out.kkt_residual <= tol) break;
    Eigen::MatrixXd h = hessian(out.epsilon);
    for (Eigen::Index j = 0; j < d; ++j) h(j, j) += 1e-14;
    Eigen::VectorXd dir = Eigen::LDLT<Eigen::MatrixXd>(h).solve(-grad);
    double step = 1.0;
    bool improved = false;
    for (int hlv = 0; hlv < 60; ++hlv) {
      const Eigen::VectorXd cand = project(out.epsilon + step * dir);
      const double fc = objective(cand);
      if (fc < f - 1e-16) {
        out.epsilon = cand;
        f = fc;
        improved = true;
        break;
      }
      step *= 0.5;
    }
    if (!improved) {
      // Projected Newton stalled (curved boundary): polish with a bisection on
      // the ridge multiplier so that the penalized stationary point sits on the
      // sphere of radius delta - the exact constrained optimum.
      double lam_lo = 0.0, lam_hi = 1.0;
      auto ridge_solution = [&](double lam) {
        Eigen::VectorXd eps = out.epsilon;
        for (int inner = 0; inner < 100; ++inner) {
          const Eigen::VectorXd g2 = gradient(eps) + lam * eps;
          if (g2.norm() <= 1e-14 * std::max(1.0, lam)) break;
          Eigen::MatrixXd h2 = hessian(eps);
          for (Eigen::Index j = 0; j < d; ++j) h2(j, j) += lam;
          eps -= Eigen::LDLT<Eigen::MatrixXd>(h2).solve(g2);
        }
        return eps;
      };
      while (ridge_solution(lam_hi).norm() > delta && lam_hi < 1e12) lam_hi *= 4.0;
      for (int b = 0; b < 200; ++b) {
        const double lam = 0.5 * (lam_lo + lam_hi);
        (ridge_solution(lam).norm() > delta ? lam_lo : lam_hi) = lam;
      }
      const Eigen::VectorXd eps = ridge_solution(lam_hi);
      if (objective(eps) <= f) {
        out.epsilon = eps.norm() > 0 ? Eigen::VectorXd(eps * std::min(1.0, delta / eps.norm()))
                                     : eps;
        f = objective(out.epsilon);
      }
      const Eigen::VectorXd g3 = gradient(out.epsilon);
      out.kkt_residual = kkt_residual(out.epsilon, g3);
      break;
    }
  }
  out.on_boundary = out.epsilon.norm() >= delta * (1.0 - 1e-9);
  return out;
}

DualStepReport dual_step_equivalence(const ObservedSample& sample, const SubgroupFamily& family,
                                     int arm, const Eigen::VectorXd& e_arm,
                                     const Eigen::VectorXd& p_current, double delta) {
  const CleverCovariates cc = build_normalized_covariate(sample, family, arm, e_arm, p_current);
  if (cc.all_zero) {
    throw ValidationError("dual_step_equivalence: the score is already zero at p_current");
  }
  DualStepReport rep;
  rep.group_score_means = cc.group_score_means;
  const PrimalSolve primal = solve_primal(sample, family, arm, e_arm, p_current, delta);
  rep.primal_epsilon = primal.epsilon;

  const Eigen::VectorXd eta0 = logits_of(p_current);
  const OffsetSolve dual = solve_offset_logistic(eta0, cc.normalized, sample.y);
  rep.dual_epsilon = dual.epsilon * cc.group_score_means / cc.score_norm;

  auto cosine = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double na = a.norm(), nb = b.norm();
    return (na == 0.0 || nb == 0.0) ? 0.0 : a.dot(b) / (na * nb);
  };
  rep.cosine_epsilon = cosine(rep.primal_epsilon, rep.dual_epsilon);

  Eigen::MatrixXd s;
  covariate_matrices(sample, family, arm, e_arm, &s, nullptr);
  rep.cosine_logit_update = cosine(s * rep.primal_epsilon, s * rep.dual_epsilon);

  const Eigen::VectorXd& m = cc.group_score_means;
  const double c = rep.primal_epsilon.dot(m) / m.squaredNorm();
  const double pn = rep.primal_epsilon.norm();
  rep.proportionality_rel_err = pn == 0.0 ? 1.0 : (rep.primal_epsilon - c * m).norm() / pn;
  return rep;
}

}  // namespace itmle
