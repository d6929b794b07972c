#include "itmle/crossfit.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <string>

#include "itmle/nuisance.hpp"
#include "itmle/rng.hpp"

namespace itmle {

namespace {

// Within-fold view of the family: same masks restricted to the fold's rows,
// shares recomputed within the fold. Deliberately skips make_family's
// every-subgroup-has-both-arms check; a fold may lack arm members in some
// subgroup, which only zeroes that group's residual score there.
SubgroupFamily restrict_family(const SubgroupFamily& family,
                               const std::vector<Eigen::Index>& rows) {
  SubgroupFamily out;
  const Eigen::Index d = family.d();
  out.masks.resize(static_cast<Eigen::Index>(rows.size()), d);
  for (Eigen::Index r = 0; r < out.masks.rows(); ++r) out.masks.row(r) = family.masks.row(rows[r]);
  out.labels = family.labels;
  out.share = out.masks.colwise().mean();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (out.share[j] <= 0.0)
      throw ValidationError("cross-fit: subgroup '" + family.labels[j] +
                            "' has no members inside a fold");
  }
  return out;
}

std::vector<std::vector<Eigen::Index>> fold_rows(const FoldPlan& plan) {
  std::vector<std::vector<Eigen::Index>> rows(plan.folds);
  for (std::size_t i = 0; i < plan.assignment.size(); ++i)
    rows[plan.assignment[i]].push_back(static_cast<Eigen::Index>(i));
  return rows;
}

std::vector<Eigen::Index> complement_rows(const FoldPlan& plan, int fold) {
  std::vector<Eigen::Index> rows;
  rows.reserve(plan.assignment.size());
  for (std::size_t i = 0; i < plan.assignment.size(); ++i)
    if (plan.assignment[i] != fold) rows.push_back(static_cast<Eigen::Index>(i));
  return rows;
}

// Mean over folds, summed in value order so relabeling folds cannot change
// the floating-point result.
Eigen::VectorXd canonical_fold_mean(const Eigen::MatrixXd& by_fold) {
  Eigen::VectorXd mean(by_fold.cols());
  std::vector<double> vals(static_cast<std::size_t>(by_fold.rows()));
  for (Eigen::Index j = 0; j < by_fold.cols(); ++j) {
    for (Eigen::Index v = 0; v < by_fold.rows(); ++v) vals[static_cast<std::size_t>(v)] = by_fold(v, j);
    std::sort(vals.begin(), vals.end());
    mean[j] = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(by_fold.rows());
  }
  return mean;
}

// Influence rows for one fold's units, written into the pooled matrix at the
// units' original positions. Shares and nuisances are the fold's own; the
// subtracted level is the cross-fit (combined) estimate.
void scatter_eif_rows(const EifMatrix& fold_eif, const std::vector<Eigen::Index>& rows,
                      Eigen::MatrixXd* pooled) {
  for (Eigen::Index r = 0; r < fold_eif.phi.rows(); ++r)
    pooled->row(rows[static_cast<std::size_t>(r)]) = fold_eif.phi.row(r);
}

}  // namespace

ObservedSample gather_rows(const ObservedSample& sample, const std::vector<Eigen::Index>& rows) {
  ObservedSample out;
  const auto m = static_cast<Eigen::Index>(rows.size());
  out.y.resize(m);
  out.t.resize(m);
  out.x.resize(m, sample.p());
  for (Eigen::Index r = 0; r < m; ++r) {
    out.y[r] = sample.y[rows[static_cast<std::size_t>(r)]];
    out.t[r] = sample.t[rows[static_cast<std::size_t>(r)]];
    out.x.row(r) = sample.x.row(rows[static_cast<std::size_t>(r)]);
  }
  out.x_names = sample.x_names;
  out.continuous_outcome = sample.continuous_outcome;
  return out;
}

FoldPlan plan_folds(const ObservedSample& sample, const SubgroupFamily& family, int folds,
                    std::uint64_t seed) {
  const Eigen::Index n = sample.n();
  if (folds < 1) throw ValidationError("cross-fit: fold count must be at least 1");
  if (folds == 1) {
    FoldPlan plan;
    plan.assignment.assign(static_cast<std::size_t>(n), 0);
    plan.folds = 1;
    return plan;
  }
  if (static_cast<Eigen::Index>(folds) > n)
    throw ValidationError("cross-fit: more folds than observations");

  constexpr int kMaxAttempts = 100;
  std::string last_failure;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    CounterRng rng(seed, "fold-plan", static_cast<std::uint64_t>(attempt));
    std::vector<std::size_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_indices(order, rng);

    // Balanced block assignment over the shuffled order: the first n % folds
    // blocks take the extra unit.
    FoldPlan plan;
    plan.assignment.assign(static_cast<std::size_t>(n), 0);
    plan.folds = folds;
    plan.attempts = attempt + 1;
    const Eigen::Index base = n / folds;
    const Eigen::Index extra = n % folds;
    Eigen::Index pos = 0;
    for (int v = 0; v < folds; ++v) {
      const Eigen::Index size = base + (v < extra ? 1 : 0);
      for (Eigen::Index k = 0; k < size; ++k)
        plan.assignment[order[static_cast<std::size_t>(pos++)]] = v;
    }

    // Validity: both arms and every subgroup inside every fold.
    bool ok = true;
    for (int v = 0; v < folds && ok; ++v) {
      Eigen::Index treated = 0;
      Eigen::Index control = 0;
      Eigen::VectorXd members = Eigen::VectorXd::Zero(family.d());
      for (Eigen::Index i = 0; i < n; ++i) {
        if (plan.assignment[static_cast<std::size_t>(i)] != v) continue;
        (sample.t[i] == 1 ? treated : control) += 1;
        members += family.masks.row(i).transpose();
      }
      if (treated == 0 || control == 0) {
        std::ostringstream msg;
        msg << "fold " << v << " lacks " << (treated == 0 ? "treated" : "control") << " units";
        last_failure = msg.str();
        ok = false;
        break;
      }
      for (Eigen::Index j = 0; j < family.d(); ++j) {
        if (members[j] <= 0.0) {
          last_failure = "fold " + std::to_string(v) + " has no members of subgroup '" +
                         family.labels[static_cast<std::size_t>(j)] + "'";
          ok = false;
          break;
        }
      }
    }
    if (ok) return plan;
  }
  throw ValidationError("cross-fit: no valid fold assignment after " +
                        std::to_string(kMaxAttempts) + " attempts (last failure: " + last_failure +
                        "); reduce the fold count or merge small subgroups");
}

CrossFitResult cv_itmle(const ObservedSample& sample, const SubgroupFamily& family, int arm,
                        const LearnerSpec& propensity_learner, const LearnerSpec& outcome_learner,
                        const EstimationConfig& config, const FoldPlan* injected_plan) {
  config.validate();
  if (arm != 0 && arm != 1) throw ValidationError("arm must be 0 or 1");
  const Eigen::Index n = sample.n();
  const Eigen::Index d = family.d();

  CrossFitResult out;
  if (injected_plan != nullptr) {
    if (static_cast<Eigen::Index>(injected_plan->assignment.size()) != n ||
        injected_plan->folds < 1)
      throw ValidationError("cross-fit: injected plan does not match the sample");
    for (const int v : injected_plan->assignment)
      if (v < 0 || v >= injected_plan->folds)
        throw ValidationError("cross-fit: injected plan has out-of-range fold ids");
    out.plan = *injected_plan;
  } else {
    out.plan = plan_folds(sample, family, config.folds, derive_seed(config.seed, "fold-plan", 0));
  }

  if (out.plan.folds == 1) {
    // Single fold: exactly the plain pipeline.
    const NuisanceFit nuisance =
        fit_nuisance(sample, propensity_learner, outcome_learner, config);
    TargetedFit fit = itmle(sample, family, arm, nuisance, config);
    out.alpha = fit.alpha;
    out.alpha_by_fold = fit.alpha.transpose();
    out.converged = fit.converged;
    out.score_norm = fit.score_norm;
    out.pooled =
        eif_risk(sample, family, arm, nuisance.arm_propensity(arm), fit.p_updated, fit.alpha);
    out.fold_e_arm.push_back(nuisance.arm_propensity(arm));
    out.fold_p_init.push_back(nuisance.arm_outcome(arm));
    out.fold_fits.push_back(std::move(fit));
    return out;
  }

  const auto rows_by_fold = fold_rows(out.plan);
  out.alpha_by_fold.resize(out.plan.folds, d);
  out.pooled.phi = Eigen::MatrixXd::Zero(n, d);
  out.converged = true;
  out.score_norm = 0.0;

  struct FoldPieces {
    std::vector<Eigen::Index> rows;
    ObservedSample data;
    SubgroupFamily fam;
    Eigen::VectorXd e_arm;
    Eigen::VectorXd p_updated;
  };
  std::vector<FoldPieces> pieces(static_cast<std::size_t>(out.plan.folds));

  for (int v = 0; v < out.plan.folds; ++v) {
    auto& piece = pieces[static_cast<std::size_t>(v)];
    piece.rows = rows_by_fold[static_cast<std::size_t>(v)];
    piece.data = gather_rows(sample, piece.rows);
    piece.fam = restrict_family(family, piece.rows);
    const ObservedSample train = gather_rows(sample, complement_rows(out.plan, v));
    const NuisanceFit nuisance =
        fit_nuisance(train, piece.data, propensity_learner, outcome_learner, config);
    piece.e_arm = nuisance.arm_propensity(arm);
    TargetedFit fit =
        itmle_core(piece.data, piece.fam, arm, piece.e_arm, nuisance.arm_outcome(arm), config);
    piece.p_updated = fit.p_updated;
    out.alpha_by_fold.row(v) = fit.alpha.transpose();
    out.converged = out.converged && fit.converged;
    out.score_norm = std::max(out.score_norm, fit.score_norm);
    out.fold_e_arm.push_back(piece.e_arm);
    out.fold_p_init.push_back(nuisance.arm_outcome(arm));
    out.fold_fits.push_back(std::move(fit));
  }

  out.alpha = canonical_fold_mean(out.alpha_by_fold);
  for (int v = 0; v < out.plan.folds; ++v) {
    const auto& piece = pieces[static_cast<std::size_t>(v)];
    const EifMatrix fold_eif =
        eif_risk(piece.data, piece.fam, arm, piece.e_arm, piece.p_updated, out.alpha);
    scatter_eif_rows(fold_eif, piece.rows, &out.pooled.phi);
  }
  out.pooled.means = out.pooled.phi.colwise().mean();
  return out;
}

CrossFitEffects cv_effects(const ObservedSample& sample, const SubgroupFamily& family,
                           EffectKind kind, const LearnerSpec& propensity_learner,
                           const LearnerSpec& outcome_learner, const EstimationConfig& config) {
  config.validate();
  if (kind == EffectKind::Risk)
    throw ValidationError("cv_effects handles contrasts; use cv_itmle for one arm");
  const Eigen::Index n = sample.n();
  const Eigen::Index d = family.d();

  CrossFitEffects out;
  out.plan = plan_folds(sample, family, config.folds, derive_seed(config.seed, "fold-plan", 0));

  if (out.plan.folds == 1) {
    const NuisanceFit nuisance =
        fit_nuisance(sample, propensity_learner, outcome_learner, config);
    JointTarget joint = joint_target_effects(sample, family, nuisance, config);
    out.alpha1 = joint.arm1.alpha;
    out.alpha0 = joint.arm0.alpha;
    out.alpha1_by_fold = out.alpha1.transpose();
    out.alpha0_by_fold = out.alpha0.transpose();
    out.effect = effect_measures(out.alpha1, out.alpha0, kind);
    out.converged = joint.converged;
    out.score_norm = joint.score_norm;
    out.pooled = eif_effect(sample, family, nuisance.e1, joint.arm1.p_updated,
                            joint.arm0.p_updated, out.alpha1, out.alpha0, kind);
    out.fold_fits.push_back(std::move(joint));
    return out;
  }

  const auto rows_by_fold = fold_rows(out.plan);
  out.alpha1_by_fold.resize(out.plan.folds, d);
  out.alpha0_by_fold.resize(out.plan.folds, d);
  out.pooled.phi = Eigen::MatrixXd::Zero(n, d);
  out.converged = true;
  out.score_norm = 0.0;

  struct FoldPieces {
    std::vector<Eigen::Index> rows;
    ObservedSample data;
    SubgroupFamily fam;
    Eigen::VectorXd e1;
    Eigen::VectorXd p1;
    Eigen::VectorXd p0;
  };
  std::vector<FoldPieces> pieces(static_cast<std::size_t>(out.plan.folds));

  for (int v = 0; v < out.plan.folds; ++v) {
    auto& piece = pieces[static_cast<std::size_t>(v)];
    piece.rows = rows_by_fold[static_cast<std::size_t>(v)];
    piece.data = gather_rows(sample, piece.rows);
    piece.fam = restrict_family(family, piece.rows);
    const ObservedSample train = gather_rows(sample, complement_rows(out.plan, v));
    const NuisanceFit nuisance =
        fit_nuisance(train, piece.data, propensity_learner, outcome_learner, config);
    piece.e1 = nuisance.e1;
    JointTarget joint = joint_target_effects(piece.data, piece.fam, nuisance, config);
    piece.p1 = joint.arm1.p_updated;
    piece.p0 = joint.arm0.p_updated;
    out.alpha1_by_fold.row(v) = joint.arm1.alpha.transpose();
    out.alpha0_by_fold.row(v) = joint.arm0.alpha.transpose();
    out.converged = out.converged && joint.converged;
    out.score_norm = std::max(out.score_norm, joint.score_norm);
    out.fold_fits.push_back(std::move(joint));
  }

  out.alpha1 = canonical_fold_mean(out.alpha1_by_fold);
  out.alpha0 = canonical_fold_mean(out.alpha0_by_fold);
  out.effect = effect_measures(out.alpha1, out.alpha0, kind);
  for (int v = 0; v < out.plan.folds; ++v) {
    const auto& piece = pieces[static_cast<std::size_t>(v)];
    const EifMatrix fold_eif = eif_effect(piece.data, piece.fam, piece.e1, piece.p1, piece.p0,
                                          out.alpha1, out.alpha0, kind);
    scatter_eif_rows(fold_eif, piece.rows, &out.pooled.phi);
  }
  out.pooled.means = out.pooled.phi.colwise().mean();
  return out;
}

}  // namespace itmle
