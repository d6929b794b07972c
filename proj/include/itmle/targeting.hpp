#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "itmle/nuisance.hpp"
#include "itmle/types.hpp"

namespace itmle {

// ---------------------------------------------------------------------------
// One-parameter offset-logistic fluctuation
// ---------------------------------------------------------------------------

struct OffsetSolve {
  double epsilon = 0.0;
  double score = 0.0;  // sum_i s_i * (y_i - expit(offset_i + epsilon * s_i))
  int iterations = 0;
};

// Maximizes sum_i y_i*(o_i + e*s_i) - log(1+exp(o_i + e*s_i)) over the scalar e.
// Safeguarded Newton (bracketed by bisection on the monotone score). Throws
// SolverError when no stationary point exists within |e| <= 1000 (separation).
OffsetSolve solve_offset_logistic(const Eigen::VectorXd& offsets,
                                  const Eigen::VectorXd& covariate, const Eigen::VectorXd& y);

// ---------------------------------------------------------------------------
// Clever covariates
// ---------------------------------------------------------------------------

// Per-unit weights steering the fluctuation toward every subgroup at once.
// per_group(i,j) is the subgroup-j covariate: mask_ij / share_j * 1(t_i = arm)
// / e_arm_i (zero off-arm and off-group). group_score_means holds
// m_j = n^-1 sum_i per_group(i,j) * (y_i - p_i), the per-group residual scores.
// normalized is the score-weighted, self-normalized combination
// sum_j per_group(i,j) * m_j / ||m||_2 used as the regression covariate;
// normalized_eval is the same weight evaluated at T = arm for every unit (the
// curve the update applies to, identical on arm rows).
struct CleverCovariates {
  Eigen::MatrixXd per_group;
  Eigen::VectorXd normalized;
  Eigen::VectorXd normalized_eval;
  Eigen::VectorXd group_score_means;
  double score_norm = 0.0;  // ||m||_2; the convergence certificate value
  bool all_zero = false;    // every group score mean is exactly zero
};

CleverCovariates build_normalized_covariate(const ObservedSample& sample,
                                            const SubgroupFamily& family, int arm,
                                            const Eigen::VectorXd& e_arm,
                                            const Eigen::VectorXd& p_current);

// ---------------------------------------------------------------------------
// Targeted fits
// ---------------------------------------------------------------------------

struct TargetedFit {
  Eigen::VectorXd alpha;      // per-subgroup plug-in means of p_updated over members
  Eigen::VectorXd p_updated;  // n updated outcome probabilities for the arm
  std::vector<double> gammas;
  int iterations = 0;
  double score_norm = 0.0;
  bool converged = false;
  std::string stop_reason;  // score_tolerance | gamma_tolerance | max_iterations
  Eigen::VectorXd group_score_means;
};

// Iterative multi-subgroup targeting: alternate (covariate build -> scalar
// offset-logistic solve -> expit update) until the score certificate
// sqrt(sum_j m_j^2) falls below config.score_tolerance, the step coefficient
// falls below config.gamma_tolerance, or config.max_iterations updates ran.
TargetedFit itmle_core(const ObservedSample& sample, const SubgroupFamily& family, int arm,
                       const Eigen::VectorXd& e_arm, const Eigen::VectorXd& p_init,
                       const EstimationConfig& config);

TargetedFit itmle(const ObservedSample& sample, const SubgroupFamily& family, int arm,
                  const NuisanceFit& nuisance, const EstimationConfig& config);

// Real-valued-outcome variant: linear fluctuation p + gamma * covariate with the
// closed-form least-squares step, same certificate and stopping rules.
TargetedFit itmle_continuous(const ObservedSample& sample, const SubgroupFamily& family, int arm,
                             const Eigen::VectorXd& e_arm, const Eigen::VectorXd& p_init,
                             const EstimationConfig& config);

// Classical one-subgroup targeting: one offset-logistic solve for the given
// subgroup, update, plug-in over the subgroup's members.
struct SingleTarget {
  double alpha = 0.0;
  double epsilon = 0.0;
  Eigen::VectorXd p_updated;
  double score_mean = 0.0;  // group residual score mean after the update
};

SingleTarget classical_single_tmle_core(const ObservedSample& sample, const Eigen::VectorXd& mask,
                                        double share, int arm, const Eigen::VectorXd& e_arm,
                                        const Eigen::VectorXd& p_init);

SingleTarget classical_single_tmle(const ObservedSample& sample, const SubgroupFamily& family,
                                   Eigen::Index group, int arm, const NuisanceFit& nuisance);

// Simultaneous one-step targeting: the d-dimensional offset-logistic regression
// solved by damped Newton. alpha[j] applies only coordinate j's coefficient to
// its own covariate (the per-group updated curve); p_joint carries the full
// d-coordinate update whose first-order conditions are the certificate.
struct OneStep {
  Eigen::VectorXd alpha;
  Eigen::VectorXd epsilons;
  Eigen::VectorXd p_joint;
  double score_norm = 0.0;
  int iterations = 0;
};

OneStep onestep_multi(const ObservedSample& sample, const SubgroupFamily& family, int arm,
                      const Eigen::VectorXd& e_arm, const Eigen::VectorXd& p_init);

// Two-arm joint targeting for effect measures: a bivariate fluctuation of
// p(T_i, X_i) along both arms' normalized covariates. Disjoint supports make
// the problem block-separable; each round updates every arm whose certificate
// is still above tolerance, and the reported score is the worse arm's.
struct JointTarget {
  TargetedFit arm1;
  TargetedFit arm0;
  int iterations = 0;
  double score_norm = 0.0;
  bool converged = false;
  std::string stop_reason;
};

JointTarget joint_target_effects(const ObservedSample& sample, const SubgroupFamily& family,
                                 const NuisanceFit& nuisance, const EstimationConfig& config);

// Effect maps applied coordinate-wise to the two arm vectors.
Eigen::VectorXd effect_measures(const Eigen::VectorXd& alpha1, const Eigen::VectorXd& alpha0,
                                EffectKind kind);

// ---------------------------------------------------------------------------
// Constrained (primal) view of one targeting step
// ---------------------------------------------------------------------------

struct PrimalSolve {
  Eigen::VectorXd epsilon;    // constrained maximizer, ||epsilon||_2 <= delta
  double kkt_residual = 0.0;  // stationarity violation at the solution
  bool on_boundary = false;
  int iterations = 0;
};

// Maximizes the multi-covariate offset log-likelihood subject to an l2 ball of
// radius delta (projected Newton with backtracking).
PrimalSolve solve_primal(const ObservedSample& sample, const SubgroupFamily& family, int arm,
                         const Eigen::VectorXd& e_arm, const Eigen::VectorXd& p_current,
                         double delta);

// Compares the constrained direction against one normalized-covariate step.
struct DualStepReport {
  Eigen::VectorXd primal_epsilon;       // from solve_primal
  Eigen::VectorXd dual_epsilon;         // gamma_hat * m / ||m|| (step in coefficient space)
  Eigen::VectorXd group_score_means;    // m at p_current
  double cosine_epsilon = 0.0;          // angle between the two coefficient vectors
  double cosine_logit_update = 0.0;     // angle between the induced logit shifts
  double proportionality_rel_err = 0.0; // ||eps - c*m|| / ||eps|| at the best c
};

DualStepReport dual_step_equivalence(const ObservedSample& sample, const SubgroupFamily& family,
                                     int arm, const Eigen::VectorXd& e_arm,
                                     const Eigen::VectorXd& p_current, double delta);

}  // namespace itmle
