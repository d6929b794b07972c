#include "itmle/baselines.hpp"

#include <chrono>
#include <cmath>

namespace itmle {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void finalize_variance(BaselineEstimate* est) {
  est->sigma = est->phi.transpose() * est->phi / static_cast<double>(est->phi.rows());
  est->degenerate.assign(static_cast<std::size_t>(est->sigma.rows()), false);
  // Influence rows that are constant up to rounding leave ~eps^2-scale dust on
  // the diagonal; genuinely informative rows sit many orders above 1e-24.
  constexpr double kDegenerateFloor = 1e-24;
  for (Eigen::Index j = 0; j < est->sigma.rows(); ++j) {
    if (est->sigma(j, j) <= kDegenerateFloor) {
      est->degenerate[static_cast<std::size_t>(j)] = true;
      est->sigma(j, j) = 0.0;
    }
  }
}

Eigen::VectorXd member_counts(const SubgroupFamily& family) {
  return family.masks.colwise().sum();
}

}  // namespace

BaselineEstimate estimate_dr(const ObservedSample& sample, const SubgroupFamily& family, int arm,
                             const NuisanceFit& nuisance) {
  const auto start = Clock::now();
  if (arm != 0 && arm != 1) throw ValidationError("arm must be 0 or 1");
  const Eigen::Index n = sample.n();
  const Eigen::Index d = family.d();
  const Eigen::VectorXd e_arm = nuisance.arm_propensity(arm);
  const Eigen::VectorXd& p_arm = nuisance.arm_outcome(arm);

  Eigen::VectorXd core(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = (sample.t[i] == arm) ? 1.0 / e_arm[i] : 0.0;
    core[i] = w * (sample.y[i] - p_arm[i]) + p_arm[i];
  }

  BaselineEstimate out;
  out.method = "dr";
  const Eigen::VectorXd counts = member_counts(family);
  out.alpha.resize(d);
  for (Eigen::Index j = 0; j < d; ++j)
    out.alpha[j] = family.masks.col(j).dot(core) / counts[j];
  out.phi.resize(n, d);
  for (Eigen::Index j = 0; j < d; ++j)
    out.phi.col(j) =
        family.masks.col(j).cwiseProduct((core.array() - out.alpha[j]).matrix()) / family.share[j];
  finalize_variance(&out);
  out.seconds = seconds_since(start);
  return out;
}

BaselineEstimate estimate_glm(const ObservedSample& sample, const SubgroupFamily& family, int arm,
                              const NuisanceFit& nuisance) {
  const auto start = Clock::now();
  if (arm != 0 && arm != 1) throw ValidationError("arm must be 0 or 1");
  const Eigen::Index n = sample.n();
  const Eigen::Index d = family.d();
  const Eigen::VectorXd& p_arm = nuisance.arm_outcome(arm);

  BaselineEstimate out;
  out.method = "glm";
  const Eigen::VectorXd counts = member_counts(family);
  out.alpha.resize(d);
  for (Eigen::Index j = 0; j < d; ++j)
    out.alpha[j] = family.masks.col(j).dot(p_arm) / counts[j];
  out.phi.resize(n, d);
  for (Eigen::Index j = 0; j < d; ++j)
    out.phi.col(j) =
        family.masks.col(j).cwiseProduct((p_arm.array() - out.alpha[j]).matrix()) / family.share[j];
  finalize_variance(&out);
  out.seconds = seconds_since(start);
  return out;
}

BaselineEstimate estimate_ipw(const ObservedSample& sample, const SubgroupFamily& family, int arm,
                              const NuisanceFit& nuisance) {
  const auto start = Clock::now();
  if (arm != 0 && arm != 1) throw ValidationError("arm must be 0 or 1");
  const Eigen::Index n = sample.n();
  const Eigen::Index d = family.d();
  const Eigen::VectorXd e_arm = nuisance.arm_propensity(arm);

  Eigen::VectorXd weighted(n);
  for (Eigen::Index i = 0; i < n; ++i)
    weighted[i] = (sample.t[i] == arm) ? sample.y[i] / e_arm[i] : 0.0;

  BaselineEstimate out;
  out.method = "ipw";
  const Eigen::VectorXd counts = member_counts(family);
  out.alpha.resize(d);
  for (Eigen::Index j = 0; j < d; ++j)
    out.alpha[j] = family.masks.col(j).dot(weighted) / counts[j];
  out.phi.resize(n, d);
  for (Eigen::Index j = 0; j < d; ++j)
    out.phi.col(j) =
        family.masks.col(j).cwiseProduct((weighted.array() - out.alpha[j]).matrix()) /
        family.share[j];
  finalize_variance(&out);
  out.seconds = seconds_since(start);
  return out;
}

BaselineEstimate estimate_tmle_single(const ObservedSample& sample, const SubgroupFamily& family,
                                      int arm, const LearnerSpec& propensity_learner,
                                      const LearnerSpec& outcome_learner,
                                      const EstimationConfig& config) {
  const auto start = Clock::now();
  if (arm != 0 && arm != 1) throw ValidationError("arm must be 0 or 1");
  const Eigen::Index n = sample.n();
  const Eigen::Index d = family.d();

  BaselineEstimate out;
  out.method = "tmle-single";
  out.alpha.resize(d);
  out.phi = Eigen::MatrixXd::Zero(n, d);

  for (Eigen::Index j = 0; j < d; ++j) {
    // Rows of this subgroup, with their original positions.
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < n; ++i)
      if (family.masks(i, j) != 0.0) rows.push_back(i);

    ObservedSample sub;
    const auto m = static_cast<Eigen::Index>(rows.size());
    sub.y.resize(m);
    sub.t.resize(m);
    sub.x.resize(m, sample.p());
    for (Eigen::Index r = 0; r < m; ++r) {
      sub.y[r] = sample.y[rows[static_cast<std::size_t>(r)]];
      sub.t[r] = sample.t[rows[static_cast<std::size_t>(r)]];
      sub.x.row(r) = sample.x.row(rows[static_cast<std::size_t>(r)]);
    }
    sub.x_names = sample.x_names;

    NuisanceFit local;
    try {
      local = fit_nuisance(sub, propensity_learner, outcome_learner, config);
    } catch (const std::exception& e) {
      throw SolverError("tmle-single: subgroup '" + family.labels[static_cast<std::size_t>(j)] +
                        "': " + e.what());
    }

    // One-group targeting inside the subgroup. The membership indicator is
    // identically 1 here, so the share in the clever covariate is a constant
    // rescaling absorbed by the fitted coefficient; pass 1.
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(m);
    SingleTarget fit;
    try {
      fit = classical_single_tmle_core(sub, ones, 1.0, arm, local.arm_propensity(arm),
                                       local.arm_outcome(arm));
    } catch (const std::exception& e) {
      throw SolverError("tmle-single: subgroup '" + family.labels[static_cast<std::size_t>(j)] +
                        "': " + e.what());
    }
    out.alpha[j] = fit.alpha;

    // One-group influence rows at the subgroup's own fits, placed back at the
    // original positions (zero outside the subgroup) so joint covariance and
    // simultaneous intervals line up with the other estimators.
    const Eigen::VectorXd e_arm = local.arm_propensity(arm);
    for (Eigen::Index r = 0; r < m; ++r) {
      const double w = (sub.t[r] == arm) ? 1.0 / e_arm[r] : 0.0;
      const double core = w * (sub.y[r] - fit.p_updated[r]) + fit.p_updated[r];
      out.phi(rows[static_cast<std::size_t>(r)], j) = (core - fit.alpha) / family.share[j];
    }
  }

  finalize_variance(&out);
  out.seconds = seconds_since(start);
  return out;
}

}  // namespace itmle
