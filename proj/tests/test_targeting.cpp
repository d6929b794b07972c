#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "helpers.hpp"
#include "itmle/nuisance.hpp"
#include "itmle/stats.hpp"
#include "itmle/targeting.hpp"
#include "oracles.hpp"

using itmle::EstimationConfig;
using itmle::LearnerKind;
using itmle::LearnerSpec;
using itmle::ObservedSample;
using itmle::SolverError;
using itmle::SubgroupFamily;

namespace {

// Plausible nuisances detached from the truth: clipped logistic transforms of
// the covariates, so targeting has real work to do.
struct Plant {
  Eigen::VectorXd e1;
  Eigen::VectorXd p;
};

Plant rough_nuisance(const ObservedSample& s) {
  Plant out;
  out.e1.resize(s.n());
  out.p.resize(s.n());
  for (Eigen::Index i = 0; i < s.n(); ++i) {
    out.e1[i] = itmle::clip(itmle::expit(0.3 * s.x(i, 0)), 0.05, 0.95);
    out.p[i] = itmle::clip(itmle::expit(-0.1 + 0.5 * s.x(i, 0) - 0.2 * s.x(i, 1)), 0.01, 0.99);
  }
  return out;
}

}  // namespace

TEST_CASE("offset-logistic solve matches bracketed bisection on its score root") {
  const ObservedSample s = helpers::make_sample(250, 41);
  const Plant plant = rough_nuisance(s);
  Eigen::VectorXd offsets(s.n()), covariate(s.n());
  for (Eigen::Index i = 0; i < s.n(); ++i) {
    offsets[i] = itmle::logit(plant.p[i]);
    covariate[i] = (s.t[i] == 1 ? 1.0 / plant.e1[i] : 0.0);
  }
  const itmle::OffsetSolve solve = itmle::solve_offset_logistic(offsets, covariate, s.y);
  const double root = oracles::offset_logistic_root(offsets, covariate, s.y);
  CHECK(solve.epsilon == doctest::Approx(root).epsilon(1e-7));
  CHECK(std::fabs(solve.score) < 1e-8);

  // The score at the solution really is the derivative of the log-likelihood:
  // perturbing epsilon in either direction lowers the likelihood.
  auto loglik = [&](double eps) {
    long double acc = 0.0L;
    for (Eigen::Index i = 0; i < s.n(); ++i) {
      const double eta = offsets[i] + eps * covariate[i];
      acc += static_cast<long double>(s.y[i] * eta - itmle::log1pexp(eta));
    }
    return static_cast<double>(acc);
  };
  const double at = loglik(solve.epsilon);
  CHECK(at >= loglik(solve.epsilon + 1e-3));
  CHECK(at >= loglik(solve.epsilon - 1e-3));
}

TEST_CASE("offset-logistic solve flags separation") {
  // Covariate support only where y = 1: the likelihood increases forever. The
  // covariate is small so the score stays measurably positive at the
  // coefficient cap instead of saturating to zero in double precision.
  Eigen::VectorXd offsets = Eigen::VectorXd::Zero(6);
  Eigen::VectorXd covariate(6), y(6);
  covariate << 0.01, 0.01, 0.01, 0, 0, 0;
  y << 1, 1, 1, 0, 1, 0;
  CHECK_THROWS_AS(itmle::solve_offset_logistic(offsets, covariate, y), SolverError);
  // And the mirror image separates towards -inf.
  Eigen::VectorXd y0(6);
  y0 << 0, 0, 0, 0, 1, 0;
  CHECK_THROWS_AS(itmle::solve_offset_logistic(offsets, covariate, y0), SolverError);
}

TEST_CASE("normalized covariate: scores, self-normalization, and the positivity identity") {
  const ObservedSample s = helpers::make_sample(300, 43);
  const SubgroupFamily fam = helpers::make_family3(s);
  const Plant plant = rough_nuisance(s);
  const itmle::CleverCovariates cc =
      itmle::build_normalized_covariate(s, fam, 1, plant.e1, plant.p);

  // Group score means against the scalar-loop oracle.
  for (Eigen::Index j = 0; j < fam.d(); ++j) {
    long double m = 0.0L;
    for (Eigen::Index i = 0; i < s.n(); ++i) {
      if (fam.masks(i, j) == 0.0 || s.t[i] != 1) continue;
      m += static_cast<long double>((s.y[i] - plant.p[i]) / (fam.share[j] * plant.e1[i]));
    }
    m /= static_cast<long double>(s.n());
    CHECK(cc.group_score_means[j] == doctest::Approx(static_cast<double>(m)).epsilon(1e-12));
  }
  CHECK(cc.score_norm == doctest::Approx(cc.group_score_means.norm()).epsilon(1e-13));
  CHECK(cc.score_norm ==
        doctest::Approx(oracles::score_norm(s, fam, 1, plant.e1, plant.p)).epsilon(1e-10));

  // sum_i normalized_i (y_i - p_i) = n * ||m||_2 >= 0: the fitted step solving
  // the one-dimensional regression along this covariate can never be negative
  // at epsilon = 0, which is what makes the step a likelihood ascent.
  long double dot = 0.0L;
  for (Eigen::Index i = 0; i < s.n(); ++i) {
    dot += static_cast<long double>(cc.normalized[i] * (s.y[i] - plant.p[i]));
  }
  CHECK(static_cast<double>(dot) ==
        doctest::Approx(static_cast<double>(s.n()) * cc.score_norm).epsilon(1e-9));

  // normalized_eval agrees with normalized on arm rows and is the same linear
  // combination with the arm indicator forced on elsewhere.
  for (Eigen::Index i = 0; i < s.n(); ++i) {
    if (s.t[i] == 1) {
      CHECK(cc.normalized_eval[i] == cc.normalized[i]);
    } else {
      CHECK(cc.normalized[i] == 0.0);
      double manual = 0.0;
      for (Eigen::Index j = 0; j < fam.d(); ++j) {
        manual += fam.masks(i, j) / (fam.share[j] * plant.e1[i]) * cc.group_score_means[j];
      }
      manual /= cc.score_norm;
      CHECK(cc.normalized_eval[i] == doctest::Approx(manual).epsilon(1e-12));
    }
  }
}

TEST_CASE("iterative targeting reaches its certificate and reports honestly") {
  const ObservedSample s = helpers::make_sample(700, 47);
  const SubgroupFamily fam = helpers::make_family3(s);
  const Plant plant = rough_nuisance(s);
  EstimationConfig config;
  config.score_tolerance = 1e-8;
  config.gamma_tolerance = 0.0;  // disabled: run to the certificate
  config.max_iterations = 200;
  const itmle::TargetedFit fit = itmle::itmle_core(s, fam, 1, plant.e1, plant.p, config);
  CHECK(fit.converged);
  CHECK(fit.stop_reason == "score_tolerance");
  CHECK(fit.score_norm <= 1e-8);
  // Certificate recomputed with the scalar-loop oracle at the updated curve.
  CHECK(oracles::score_norm(s, fam, 1, plant.e1, fit.p_updated) <= 2e-8);
  // Plug-in means really average p_updated over members.
  for (Eigen::Index j = 0; j < fam.d(); ++j) {
    long double acc = 0.0L, cnt = 0.0L;
    for (Eigen::Index i = 0; i < s.n(); ++i) {
      if (fam.masks(i, j) == 0.0) continue;
      acc += static_cast<long double>(fit.p_updated[i]);
      cnt += 1.0L;
    }
    CHECK(fit.alpha[j] == doctest::Approx(static_cast<double>(acc / cnt)).epsilon(1e-12));
  }
  // Every step coefficient is nonnegative (the ascent identity above).
  for (double g : fit.gammas) CHECK(g >= 0.0);
  CHECK(fit.iterations == static_cast<int>(fit.gammas.size()));
}

TEST_CASE("stop reasons: step tolerance and iteration cap are reported as such") {
  const ObservedSample s = helpers::make_sample(400, 53);
  const SubgroupFamily fam = helpers::make_family3(s);
  const Plant plant = rough_nuisance(s);
  SUBCASE("gamma tolerance") {
    EstimationConfig config;
    config.score_tolerance = 1e-14;  // unreachable
    config.gamma_tolerance = 1e-2;   // loose: triggers quickly
    config.max_iterations = 100;
    const itmle::TargetedFit fit = itmle::itmle_core(s, fam, 1, plant.e1, plant.p, config);
    CHECK(fit.stop_reason == "gamma_tolerance");
    CHECK_FALSE(fit.converged);  // only the certificate grants convergence
  }
  SUBCASE("iteration cap") {
    EstimationConfig config;
    config.score_tolerance = 1e-14;
    config.gamma_tolerance = 0.0;
    config.max_iterations = 2;
    const itmle::TargetedFit fit = itmle::itmle_core(s, fam, 1, plant.e1, plant.p, config);
    CHECK(fit.stop_reason == "max_iterations");
    CHECK(fit.iterations == 2);
    CHECK_FALSE(fit.converged);
  }
}

TEST_CASE("single subgroup: iterative targeting equals classical one-shot targeting") {
  const ObservedSample s = helpers::make_sample(500, 59);
  const SubgroupFamily fam = helpers::make_family_whole(s);
  const Plant plant = rough_nuisance(s);
  EstimationConfig config;
  config.score_tolerance = 1e-10;
  config.gamma_tolerance = 0.0;
  config.max_iterations = 100;
  const itmle::TargetedFit iter = itmle::itmle_core(s, fam, 1, plant.e1, plant.p, config);
  const itmle::SingleTarget classical =
      itmle::classical_single_tmle_core(s, fam.masks.col(0), fam.share[0], 1, plant.e1, plant.p);
  // Same stationary point: the d=1 score equation has a unique root.
  CHECK(iter.alpha[0] == doctest::Approx(classical.alpha).epsilon(1e-8));
  CHECK(std::fabs(classical.score_mean) < 1e-10);
  // And the classical step solves in one iteration what the loop converges to.
  CHECK(helpers::max_abs_diff(iter.p_updated, classical.p_updated) < 1e-7);
}

TEST_CASE("constant nuisances: the plug-in equals the augmented estimator exactly") {
  // With p constant at the arm mean and e constant, the initial residual score
  // is exactly zero, no update happens, and the targeted mean equals both the
  // empirical arm mean and the augmented (doubly robust) formula.
  const ObservedSample s = helpers::make_sample(350, 61);
  const SubgroupFamily fam = helpers::make_family_whole(s);
  double ybar1 = 0.0, n1 = 0.0;
  for (Eigen::Index i = 0; i < s.n(); ++i) {
    if (s.t[i] == 1) {
      ybar1 += s.y[i];
      n1 += 1.0;
    }
  }
  ybar1 /= n1;
  const double ehat = n1 / static_cast<double>(s.n());
  const Eigen::VectorXd e_const = Eigen::VectorXd::Constant(s.n(), ehat);
  const Eigen::VectorXd p_const = Eigen::VectorXd::Constant(s.n(), ybar1);
  EstimationConfig config;
  const itmle::TargetedFit fit = itmle::itmle_core(s, fam, 1, e_const, p_const, config);
  CHECK(fit.converged);
  CHECK(fit.iterations == 0);  // certificate already holds at the start
  CHECK(fit.alpha[0] == doctest::Approx(ybar1).epsilon(1e-13));
  const double aipw = oracles::aipw(s, fam.masks.col(0), 1, e_const, p_const);
  CHECK(fit.alpha[0] == doctest::Approx(aipw).epsilon(1e-13));
}

TEST_CASE("targeting solves the augmented representation at the updated curve") {
  // After convergence the plug-in over each subgroup agrees with the augmented
  // estimator evaluated at the *updated* outcome curve: that is exactly what a
  // zero residual score means, and it holds for every subgroup at once.
  const ObservedSample s = helpers::make_sample(600, 67);
  const SubgroupFamily fam = helpers::make_family3(s);
  const Plant plant = rough_nuisance(s);
  EstimationConfig config;
  config.score_tolerance = 1e-10;
  config.gamma_tolerance = 0.0;
  config.max_iterations = 300;
  const itmle::TargetedFit fit = itmle::itmle_core(s, fam, 1, plant.e1, plant.p, config);
  REQUIRE(fit.converged);
  for (Eigen::Index j = 0; j < fam.d(); ++j) {
    const double aug = oracles::aipw(s, fam.masks.col(j), 1, plant.e1, fit.p_updated);
    CHECK(fit.alpha[j] == doctest::Approx(aug).epsilon(1e-7));
  }
}

TEST_CASE("arm zero targets the controls") {
  const ObservedSample s = helpers::make_sample(400, 71);
  const SubgroupFamily fam = helpers::make_family_whole(s);
  const Plant plant = rough_nuisance(s);
  Eigen::VectorXd e0(s.n());
  for (Eigen::Index i = 0; i < s.n(); ++i) e0[i] = 1.0 - plant.e1[i];
  EstimationConfig config;
  config.score_tolerance = 1e-9;
  config.gamma_tolerance = 0.0;
  config.max_iterations = 100;
  const itmle::TargetedFit fit = itmle::itmle_core(s, fam, 0, e0, plant.p, config);
  CHECK(fit.converged);
  CHECK(oracles::score_norm(s, fam, 0, e0, fit.p_updated) <= 2e-9);
  const double aug = oracles::aipw(s, fam.masks.col(0), 0, e0, fit.p_updated);
  CHECK(fit.alpha[0] == doctest::Approx(aug).epsilon(1e-8));
}

TEST_CASE("one-step joint targeting satisfies its first-order conditions") {
  const ObservedSample s = helpers::make_sample(500, 73);
  const SubgroupFamily fam = helpers::make_family3(s);
  const Plant plant = rough_nuisance(s);
  const itmle::OneStep one = itmle::onestep_multi(s, fam, 1, plant.e1, plant.p);
  CHECK(one.score_norm < 1e-8);
  // FOC per coordinate at the joint curve, recomputed with scalar loops.
  for (Eigen::Index j = 0; j < fam.d(); ++j) {
    long double m = 0.0L;
    for (Eigen::Index i = 0; i < s.n(); ++i) {
      if (fam.masks(i, j) == 0.0 || s.t[i] != 1) continue;
      m += static_cast<long double>((s.y[i] - one.p_joint[i]) / (fam.share[j] * plant.e1[i]));
    }
    CHECK(std::fabs(static_cast<double>(m / s.n())) < 1e-8);
  }
  // The iterative path reaches the same subgroup means (both solve the same
  // score system; the fluctuation families differ but agree at convergence
  // through the augmented representation, so compare via that route).
  EstimationConfig config;
  config.score_tolerance = 1e-10;
  config.gamma_tolerance = 0.0;
  config.max_iterations = 300;
  const itmle::TargetedFit iter = itmle::itmle_core(s, fam, 1, plant.e1, plant.p, config);
  for (Eigen::Index j = 0; j < fam.d(); ++j) {
    const double aug_one = oracles::aipw(s, fam.masks.col(j), 1, plant.e1, one.p_joint);
    const double aug_iter = oracles::aipw(s, fam.masks.col(j), 1, plant.e1, iter.p_updated);
    CHECK(aug_one == doctest::Approx(aug_iter).epsilon(1e-7));
  }
}

TEST_CASE("one-step joint targeting rejects collinear covariates") {
  // Duplicated subgroup -> singular Hessian in the d-dimensional solve.
  const ObservedSample s = helpers::make_sample(200, 79);
  Eigen::MatrixXd masks(s.n(), 2);
  masks.col(0).setOnes();
  masks.col(1).setOnes();
  const SubgroupFamily fam = itmle::make_family(s, masks, {"a", "b"});
  const Plant plant = rough_nuisance(s);
  CHECK_THROWS_AS(itmle::onestep_multi(s, fam, 1, plant.e1, plant.p), SolverError);
}

TEST_CASE("two-arm joint targeting certifies both arms") {
  const ObservedSample s = helpers::make_sample(800, 83);
  const SubgroupFamily fam = helpers::make_family3(s);
  EstimationConfig config;
  config.score_tolerance = 1e-8;
  config.gamma_tolerance = 0.0;
  config.max_iterations = 200;
  LearnerSpec learner;
  learner.regularization = 1e-4;
  const itmle::NuisanceFit nuis = itmle::fit_nuisance(s, learner, learner, config);
  const itmle::JointTarget joint = itmle::joint_target_effects(s, fam, nuis, config);
  CHECK(joint.converged);
  CHECK(joint.score_norm <= 1e-8);
  Eigen::VectorXd e0 = Eigen::VectorXd::Ones(s.n()) - nuis.e1;
  CHECK(oracles::score_norm(s, fam, 1, nuis.e1, joint.arm1.p_updated) <= 2e-8);
  CHECK(oracles::score_norm(s, fam, 0, e0, joint.arm0.p_updated) <= 2e-8);
}

TEST_CASE("effect maps evaluate their formulas coordinate-wise") {
  Eigen::VectorXd a1(2), a0(2);
  a1 << 0.6, 0.3;
  a0 << 0.4, 0.2;
  const Eigen::VectorXd ard = itmle::effect_measures(a1, a0, itmle::EffectKind::Ard);
  CHECK(ard[0] == doctest::Approx(0.2).epsilon(1e-14));
  CHECK(ard[1] == doctest::Approx(0.1).epsilon(1e-14));
  const Eigen::VectorXd rr = itmle::effect_measures(a1, a0, itmle::EffectKind::Rr);
  CHECK(rr[0] == doctest::Approx(1.5).epsilon(1e-14));
  CHECK(rr[1] == doctest::Approx(1.5).epsilon(1e-14));
  const Eigen::VectorXd orr = itmle::effect_measures(a1, a0, itmle::EffectKind::Or);
  CHECK(orr[0] == doctest::Approx((0.6 / 0.4) / (0.4 / 0.6)).epsilon(1e-12));
  CHECK(orr[1] == doctest::Approx((0.3 / 0.7) / (0.2 / 0.8)).epsilon(1e-12));
}

TEST_CASE("real-valued outcomes: linear fluctuation reaches the same certificate") {
  const ObservedSample s = helpers::make_continuous_sample(600, 87);
  const SubgroupFamily fam = helpers::make_family3(s);
  Eigen::VectorXd e1(s.n()), p(s.n());
  for (Eigen::Index i = 0; i < s.n(); ++i) {
    e1[i] = itmle::clip(itmle::expit(0.3 * s.x(i, 0)), 0.05, 0.95);
    p[i] = 0.8 * s.x(i, 0);  // deliberately rough
  }
  EstimationConfig config;
  config.score_tolerance = 1e-9;
  config.gamma_tolerance = 0.0;
  config.max_iterations = 200;
  const itmle::TargetedFit fit = itmle::itmle_continuous(s, fam, 1, e1, p, config);
  CHECK(fit.converged);
  CHECK(oracles::score_norm(s, fam, 1, e1, fit.p_updated) <= 2e-9);
  for (Eigen::Index j = 0; j < fam.d(); ++j) {
    const double aug = oracles::aipw(s, fam.masks.col(j), 1, e1, fit.p_updated);
    CHECK(fit.alpha[j] == doctest::Approx(aug).epsilon(1e-8));
  }
}

TEST_CASE("constrained one-step direction matches the score direction") {
  // The l2-constrained likelihood ascent points along the residual score vector
  // (to first order). Verify via the KKT residual and the angle between the
  // constrained maximizer and the score.
  const ObservedSample s = helpers::make_sample(500, 97);
  const SubgroupFamily fam = helpers::make_family3(s);
  const Plant plant = rough_nuisance(s);
  SUBCASE("small radius: active constraint, near-perfect alignment") {
    const double delta = 1e-3;
    const itmle::PrimalSolve primal = itmle::solve_primal(s, fam, 1, plant.e1, plant.p, delta);
    CHECK(primal.on_boundary);
    CHECK(primal.epsilon.norm() == doctest::Approx(delta).epsilon(1e-6));
    CHECK(primal.kkt_residual < 1e-8);
    const itmle::DualStepReport rep =
        itmle::dual_step_equivalence(s, fam, 1, plant.e1, plant.p, delta);
    CHECK(rep.cosine_epsilon > 0.999);
    CHECK(rep.cosine_logit_update > 0.999);
    CHECK(rep.proportionality_rel_err < 1e-2);
  }
  SUBCASE("huge radius: constraint slack, interior maximizer") {
    const itmle::PrimalSolve primal = itmle::solve_primal(s, fam, 1, plant.e1, plant.p, 1e3);
    CHECK_FALSE(primal.on_boundary);
    CHECK(primal.kkt_residual < 1e-6);
  }
  SUBCASE("alignment sharpens as the radius shrinks") {
    double prev_cos = -1.0;
    for (double delta : {0.3, 0.03, 0.003}) {
      const itmle::DualStepReport rep =
          itmle::dual_step_equivalence(s, fam, 1, plant.e1, plant.p, delta);
      CHECK(rep.cosine_epsilon >= prev_cos - 1e-9);
      prev_cos = rep.cosine_epsilon;
    }
    CHECK(prev_cos > 0.9999);
  }
}

TEST_CASE("library pipeline entrypoint wires nuisance into targeting") {
  const ObservedSample s = helpers::make_sample(500, 3);
  const SubgroupFamily fam = helpers::make_family3(s);
  EstimationConfig config;
  LearnerSpec learner;
  learner.regularization = 1e-4;
  const itmle::NuisanceFit nuis = itmle::fit_nuisance(s, learner, learner, config);
  const itmle::TargetedFit a = itmle::itmle(s, fam, 1, nuis, config);
  const itmle::TargetedFit b = itmle::itmle_core(s, fam, 1, nuis.arm_propensity(1),
                                                 nuis.arm_outcome(1), config);
  CHECK(helpers::max_abs_diff(a.alpha, b.alpha) == 0.0);
  CHECK(helpers::max_abs_diff(a.p_updated, b.p_updated) == 0.0);
}
