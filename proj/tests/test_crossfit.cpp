#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "helpers.hpp"
#include "itmle/crossfit.hpp"
#include "itmle/nuisance.hpp"
#include "itmle/stats.hpp"
#include "oracles.hpp"

using itmle::EstimationConfig;
using itmle::FoldPlan;
using itmle::LearnerSpec;
using itmle::ObservedSample;
using itmle::SubgroupFamily;
using itmle::ValidationError;

namespace {

LearnerSpec ridge_learner() {
  LearnerSpec spec;
  spec.regularization = 1e-4;
  return spec;
}

}  // namespace

TEST_CASE("fold plans are balanced, valid, and deterministic") {
  const ObservedSample s = helpers::make_sample(503, 7);
  const SubgroupFamily fam = helpers::make_family3(s);
  const FoldPlan plan = itmle::plan_folds(s, fam, 5, 99);
  REQUIRE(plan.assignment.size() == 503);
  REQUIRE(plan.folds == 5);
  std::vector<int> counts(5, 0);
  for (int f : plan.assignment) {
    REQUIRE(f >= 0);
    REQUIRE(f < 5);
    ++counts[static_cast<std::size_t>(f)];
  }
  // 503 = 5*100 + 3: sizes differ by at most one.
  CHECK(*std::max_element(counts.begin(), counts.end()) -
            *std::min_element(counts.begin(), counts.end()) <=
        1);
  // Validity: both arms and every subgroup in every fold.
  for (int v = 0; v < 5; ++v) {
    int treated = 0, control = 0;
    Eigen::VectorXd members = Eigen::VectorXd::Zero(fam.d());
    for (Eigen::Index i = 0; i < s.n(); ++i) {
      if (plan.assignment[static_cast<std::size_t>(i)] != v) continue;
      (s.t[i] == 1 ? treated : control)++;
      for (Eigen::Index j = 0; j < fam.d(); ++j) members[j] += fam.masks(i, j);
    }
    CHECK(treated > 0);
    CHECK(control > 0);
    CHECK(members.minCoeff() > 0);
  }
  // Determinism in the seed.
  const FoldPlan again = itmle::plan_folds(s, fam, 5, 99);
  CHECK(plan.assignment == again.assignment);
  const FoldPlan other = itmle::plan_folds(s, fam, 5, 100);
  CHECK(plan.assignment != other.assignment);
}

TEST_CASE("impossible fold constraints fail with a diagnosis") {
  // A subgroup with two members cannot appear in all three folds.
  const ObservedSample s = helpers::make_sample(90, 21);
  Eigen::MatrixXd masks = Eigen::MatrixXd::Ones(s.n(), 2);
  Eigen::Index one_treated = -1, one_control = -1;
  for (Eigen::Index i = 0; i < s.n(); ++i) {
    if (one_treated < 0 && s.t[i] == 1) one_treated = i;
    if (one_control < 0 && s.t[i] == 0) one_control = i;
  }
  masks.col(1).setZero();
  masks(one_treated, 1) = 1.0;
  masks(one_control, 1) = 1.0;
  const SubgroupFamily fam = itmle::make_family(s, masks, {"all", "tiny"});
  CHECK_THROWS_WITH_AS(itmle::plan_folds(s, fam, 3, 5), doctest::Contains("tiny"),
                       ValidationError);
}

TEST_CASE("row gathering preserves order and content") {
  const ObservedSample s = helpers::make_sample(40, 3);
  const std::vector<Eigen::Index> rows{5, 0, 17, 39};
  const ObservedSample sub = itmle::gather_rows(s, rows);
  REQUIRE(sub.n() == 4);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    CHECK(sub.y[i] == s.y[rows[k]]);
    CHECK(sub.t[i] == s.t[rows[k]]);
    CHECK((sub.x.row(i) - s.x.row(rows[k])).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(sub.x_names == s.x_names);
}

TEST_CASE("one fold reproduces the plain pipeline bit for bit") {
  const ObservedSample s = helpers::make_sample(400, 31);
  const SubgroupFamily fam = helpers::make_family3(s);
  EstimationConfig config;
  config.folds = 1;
  const itmle::CrossFitResult cv =
      itmle::cv_itmle(s, fam, 1, ridge_learner(), ridge_learner(), config);
  const itmle::NuisanceFit nuis = itmle::fit_nuisance(s, ridge_learner(), ridge_learner(), config);
  const itmle::TargetedFit plain = itmle::itmle(s, fam, 1, nuis, config);
  CHECK(helpers::max_abs_diff(cv.alpha, plain.alpha) == 0.0);
  const itmle::EifMatrix eif =
      itmle::eif_risk(s, fam, 1, nuis.arm_propensity(1), plain.p_updated, plain.alpha);
  CHECK(helpers::max_abs_diff(cv.pooled.phi, eif.phi) == 0.0);
  CHECK(cv.converged == plain.converged);
  CHECK(cv.plan.folds == 1);
}

TEST_CASE("every fold reaches its own certificate at moderate sample sizes") {
  const ObservedSample s = helpers::make_sample(3000, 37);
  const SubgroupFamily fam = helpers::make_family3(s);
  EstimationConfig config;
  config.folds = 3;
  config.score_tolerance = 1e-7;
  config.gamma_tolerance = 0.0;
  config.max_iterations = 200;
  config.seed = 12;
  const itmle::CrossFitResult cv =
      itmle::cv_itmle(s, fam, 1, ridge_learner(), ridge_learner(), config);
  CHECK(cv.converged);
  CHECK(cv.score_norm <= 1e-7);
  REQUIRE(cv.fold_fits.size() == 3);
  for (const auto& fit : cv.fold_fits) {
    CHECK(fit.converged);
    CHECK(fit.stop_reason == "score_tolerance");
  }
  // Combined estimate = canonical mean of the fold estimates.
  for (Eigen::Index j = 0; j < fam.d(); ++j) {
    std::vector<double> vals;
    for (int v = 0; v < 3; ++v) vals.push_back(cv.alpha_by_fold(v, j));
    std::sort(vals.begin(), vals.end());
    CHECK(cv.alpha[j] == (vals[0] + vals[1] + vals[2]) / 3.0);
  }
  // Pooled influence means are near zero (each fold targeted its own rows).
  for (Eigen::Index j = 0; j < fam.d(); ++j) {
    CHECK(std::fabs(cv.pooled.means[j]) < 1e-7);
  }
}

TEST_CASE("relabeling the folds changes nothing") {
  const ObservedSample s = helpers::make_sample(900, 41);
  const SubgroupFamily fam = helpers::make_family3(s);
  EstimationConfig config;
  config.folds = 3;
  config.seed = 4;
  const FoldPlan plan = itmle::plan_folds(s, fam, 3, 4);
  FoldPlan relabeled = plan;
  for (auto& f : relabeled.assignment) f = (f + 1) % 3;  // 0->1, 1->2, 2->0
  const itmle::CrossFitResult a =
      itmle::cv_itmle(s, fam, 1, ridge_learner(), ridge_learner(), config, &plan);
  const itmle::CrossFitResult b =
      itmle::cv_itmle(s, fam, 1, ridge_learner(), ridge_learner(), config, &relabeled);
  // Fold ids are labels: the combined estimate and pooled influence rows are
  // bitwise identical, not merely close.
  CHECK(helpers::max_abs_diff(a.alpha, b.alpha) == 0.0);
  CHECK(helpers::max_abs_diff(a.pooled.phi, b.pooled.phi) == 0.0);
  // The per-fold blocks are the same set, shifted by one.
  for (int v = 0; v < 3; ++v) {
    const Eigen::VectorXd row_a = a.alpha_by_fold.row(v);
    const Eigen::VectorXd row_b = b.alpha_by_fold.row((v + 1) % 3);
    CHECK(helpers::max_abs_diff(row_a, row_b) == 0.0);
  }
}

TEST_CASE("injected plans are validated") {
  const ObservedSample s = helpers::make_sample(200, 43);
  const SubgroupFamily fam = helpers::make_family3(s);
  EstimationConfig config;
  config.folds = 2;
  FoldPlan bad;
  bad.folds = 2;
  bad.assignment.assign(199, 0);  // wrong length
  CHECK_THROWS_AS(itmle::cv_itmle(s, fam, 1, ridge_learner(), ridge_learner(), config, &bad),
                  ValidationError);
  bad.assignment.assign(200, 0);
  bad.assignment[0] = 5;  // out-of-range fold id
  CHECK_THROWS_AS(itmle::cv_itmle(s, fam, 1, ridge_learner(), ridge_learner(), config, &bad),
                  ValidationError);
}

TEST_CASE("a fold's nuisances never see the fold's own outcomes") {
  // Poison test: change y only inside fold 0 and re-run with the same plan.
  // Fold 0's out-of-fold nuisance predictions (trained on the complement,
  // which is unchanged) must match bitwise; some other fold's must change.
  const ObservedSample s = helpers::make_sample(600, 47);
  const SubgroupFamily fam = helpers::make_family3(s);
  EstimationConfig config;
  config.folds = 3;
  const FoldPlan plan = itmle::plan_folds(s, fam, 3, 17);
  ObservedSample poisoned = s;
  for (Eigen::Index i = 0; i < s.n(); ++i) {
    if (plan.assignment[static_cast<std::size_t>(i)] == 0) poisoned.y[i] = 1.0 - poisoned.y[i];
  }
  const itmle::CrossFitResult a =
      itmle::cv_itmle(s, fam, 1, ridge_learner(), ridge_learner(), config, &plan);
  const itmle::CrossFitResult b =
      itmle::cv_itmle(poisoned, fam, 1, ridge_learner(), ridge_learner(), config, &plan);
  REQUIRE(a.fold_p_init.size() == 3);
  REQUIRE(b.fold_p_init.size() == 3);
  // Fold 0 outcome-curve inputs: unchanged (its training rows are folds 1+2).
  CHECK(helpers::max_abs_diff(a.fold_p_init[0], b.fold_p_init[0]) == 0.0);
  CHECK(helpers::max_abs_diff(a.fold_e_arm[0], b.fold_e_arm[0]) == 0.0);
  // Folds 1 and 2 train on fold 0 and must notice the poisoning.
  CHECK(helpers::max_abs_diff(a.fold_p_init[1], b.fold_p_init[1]) > 0.0);
  CHECK(helpers::max_abs_diff(a.fold_p_init[2], b.fold_p_init[2]) > 0.0);
  // The propensity never uses y at all, so it is unchanged everywhere.
  CHECK(helpers::max_abs_diff(a.fold_e_arm[1], b.fold_e_arm[1]) == 0.0);
  CHECK(helpers::max_abs_diff(a.fold_e_arm[2], b.fold_e_arm[2]) == 0.0);
}

TEST_CASE("cross-fit estimates stay near the plain pipeline on well-posed data") {
  const ObservedSample s = helpers::make_sample(2000, 53);
  const SubgroupFamily fam = helpers::make_family3(s);
  EstimationConfig plain_config;
  EstimationConfig cv_config;
  cv_config.folds = 5;
  cv_config.seed = 9;
  const itmle::CrossFitResult cv =
      itmle::cv_itmle(s, fam, 1, ridge_learner(), ridge_learner(), cv_config);
  const itmle::CrossFitResult plain =
      itmle::cv_itmle(s, fam, 1, ridge_learner(), ridge_learner(), plain_config);
  // Not equal, but close: both estimate the same functional.
  for (Eigen::Index j = 0; j < fam.d(); ++j) {
    CHECK(cv.alpha[j] == doctest::Approx(plain.alpha[j]).epsilon(0.08));
  }
}

TEST_CASE("effect-scale cross-fitting: identity checks and risk rejection") {
  const ObservedSample s = helpers::make_sample(1200, 59);
  const SubgroupFamily fam = helpers::make_family3(s);
  EstimationConfig config;
  config.folds = 2;
  config.seed = 31;
  CHECK_THROWS_AS(itmle::cv_effects(s, fam, itmle::EffectKind::Risk, ridge_learner(),
                                    ridge_learner(), config),
                  ValidationError);
  const itmle::CrossFitEffects eff = itmle::cv_effects(s, fam, itmle::EffectKind::Ard,
                                                       ridge_learner(), ridge_learner(), config);
  REQUIRE(eff.alpha1.size() == fam.d());
  // The reported effect is the map applied to the combined arm means.
  const Eigen::VectorXd expected =
      itmle::effect_measures(eff.alpha1, eff.alpha0, itmle::EffectKind::Ard);
  CHECK(helpers::max_abs_diff(eff.effect, expected) == 0.0);
  // Pooled influence means vanish only to second order in the fold spread:
  // the delta-method weights are evaluated at the combined arm means rather
  // than each fold's own, leaving an O(spread^2) remainder.
  for (Eigen::Index j = 0; j < fam.d(); ++j) {
    CHECK(std::fabs(eff.pooled.means[j]) < 5e-3);
  }
  // Arm means and ARD land in sane ranges.
  for (Eigen::Index j = 0; j < fam.d(); ++j) {
    CHECK(eff.alpha1[j] > 0.0);
    CHECK(eff.alpha1[j] < 1.0);
    CHECK(eff.alpha0[j] > 0.0);
    CHECK(eff.alpha0[j] < 1.0);
    CHECK(std::fabs(eff.effect[j]) < 1.0);
  }
}

TEST_CASE("ratio effects transform the same arm means consistently across scales") {
  const ObservedSample s = helpers::make_sample(1500, 61);
  const SubgroupFamily fam = helpers::make_family_whole(s);
  EstimationConfig config;
  config.folds = 2;
  config.seed = 77;
  const itmle::CrossFitEffects rr = itmle::cv_effects(s, fam, itmle::EffectKind::Rr,
                                                      ridge_learner(), ridge_learner(), config);
  const itmle::CrossFitEffects orr = itmle::cv_effects(s, fam, itmle::EffectKind::Or,
                                                       ridge_learner(), ridge_learner(), config);
  // Same plan and nuisance path -> identical arm means; only the map differs.
  CHECK(helpers::max_abs_diff(rr.alpha1, orr.alpha1) == 0.0);
  CHECK(helpers::max_abs_diff(rr.alpha0, orr.alpha0) == 0.0);
  CHECK(rr.effect[0] ==
        doctest::Approx(rr.alpha1[0] / rr.alpha0[0]).epsilon(1e-12));
  const double odds1 = rr.alpha1[0] / (1.0 - rr.alpha1[0]);
  const double odds0 = rr.alpha0[0] / (1.0 - rr.alpha0[0]);
  CHECK(orr.effect[0] == doctest::Approx(odds1 / odds0).epsilon(1e-12));
}
