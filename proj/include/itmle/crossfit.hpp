#pragma once

#include <cstdint>
#include <vector>

#include "itmle/inference.hpp"
#include "itmle/targeting.hpp"
#include "itmle/types.hpp"

namespace itmle {

struct FoldPlan {
  std::vector<int> assignment;  // fold id per unit, in [0, folds)
  int folds = 1;
  int attempts = 0;  // resampling rounds used before a valid plan appeared
};

// Balanced random partition (fold sizes differ by at most one). A plan is
// valid when every fold contains both treatment arms and at least one member
// of every subgroup; up to 100 resampling attempts before giving up.
FoldPlan plan_folds(const ObservedSample& sample, const SubgroupFamily& family, int folds,
                    std::uint64_t seed);

// Gathers the listed rows into a new sample (order preserved).
ObservedSample gather_rows(const ObservedSample& sample, const std::vector<Eigen::Index>& rows);

struct CrossFitResult {
  Eigen::VectorXd alpha;          // fold means, combined in a canonical order
  Eigen::MatrixXd alpha_by_fold;  // folds x d
  std::vector<TargetedFit> fold_fits;
  // Out-of-fold nuisance predictions for each fold's own rows (row order =
  // the fold's row order). Diagnostics: these witness that a fold's inputs
  // came only from its complement.
  std::vector<Eigen::VectorXd> fold_e_arm;
  std::vector<Eigen::VectorXd> fold_p_init;
  EifMatrix pooled;  // influence rows per unit, fold-local curves, combined alpha
  FoldPlan plan;
  bool converged = false;   // every fold met the certificate
  double score_norm = 0.0;  // worst fold
};

// Cross-fitted multi-subgroup targeting for one arm: nuisances are fit on each
// fold's complement, the targeting loop runs on the fold's own rows, and the
// fold-level estimates are averaged. folds == 1 routes to the plain pipeline.
// A caller-supplied plan (when non-null) replaces the seeded one; fold ids are
// labels only, so relabeling a plan cannot change the combined estimate.
CrossFitResult cv_itmle(const ObservedSample& sample, const SubgroupFamily& family, int arm,
                        const LearnerSpec& propensity_learner, const LearnerSpec& outcome_learner,
                        const EstimationConfig& config, const FoldPlan* injected_plan = nullptr);

struct CrossFitEffects {
  Eigen::VectorXd alpha1;
  Eigen::VectorXd alpha0;
  Eigen::VectorXd effect;
  Eigen::MatrixXd alpha1_by_fold;
  Eigen::MatrixXd alpha0_by_fold;
  std::vector<JointTarget> fold_fits;
  EifMatrix pooled;  // effect-scale influence rows
  FoldPlan plan;
  bool converged = false;
  double score_norm = 0.0;
};

// Cross-fitted two-arm targeting mapped through an effect measure.
CrossFitEffects cv_effects(const ObservedSample& sample, const SubgroupFamily& family,
                           EffectKind kind, const LearnerSpec& propensity_learner,
                           const LearnerSpec& outcome_learner, const EstimationConfig& config);

}  // namespace itmle
