#include "itmle/inference.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "itmle/rng.hpp"
#include "itmle/stats.hpp"

namespace itmle {
namespace {

void check_lengths(const ObservedSample& sample, const Eigen::VectorXd& v, const char* what) {
  if (v.size() != sample.n()) {
    throw ValidationError(std::string("inference: ") + what + " length mismatch");
  }
}

}  // namespace

EifMatrix eif_risk(const ObservedSample& sample, const SubgroupFamily& family, int arm,
                   const Eigen::VectorXd& e_arm, const Eigen::VectorXd& p,
                   const Eigen::VectorXd& alpha) {
  const Eigen::Index n = sample.n();
  const Eigen::Index d = family.d();
  check_lengths(sample, e_arm, "propensity");
  check_lengths(sample, p, "outcome curve");
  if (alpha.size() != d) throw ValidationError("inference: alpha length mismatch");
  EifMatrix out;
  out.phi.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = (sample.t[i] == arm) ? 1.0 / e_arm[i] : 0.0;
    const double core = (sample.y[i] - p[i]) * w + p[i];
    for (Eigen::Index j = 0; j < d; ++j) {
      out.phi(i, j) =
          family.masks(i, j) == 0.0 ? 0.0 : (core - alpha[j]) / family.share[j];
    }
  }
  out.means = out.phi.colwise().mean();
  return out;
}

void eif_jacobian(EffectKind kind, double a1, double a0, double* j1, double* j0) {
  switch (kind) {
    case EffectKind::Risk:
      throw ValidationError("eif_jacobian: 'risk' is an arm mean, not a contrast");
    case EffectKind::Ard:
      *j1 = 1.0;
      *j0 = -1.0;
      return;
    case EffectKind::Rr:
      if (!(a0 > 0.0)) throw ValidationError("eif_jacobian: risk ratio needs alpha0 > 0");
      *j1 = 1.0 / a0;
      *j0 = -a1 / (a0 * a0);
      return;
    case EffectKind::Or:
      if (!(a0 > 0.0 && a0 < 1.0 && a1 > 0.0 && a1 < 1.0)) {
        throw ValidationError("eif_jacobian: odds ratio needs both arms strictly in (0,1)");
      }
      *j1 = (1.0 - a0) / (a0 * (1.0 - a1) * (1.0 - a1));
      *j0 = -a1 / (a0 * a0 * (1.0 - a1));
      return;
  }
  throw ValidationError("eif_jacobian: unknown effect");
}

EifMatrix eif_effect(const ObservedSample& sample, const SubgroupFamily& family,
                     const Eigen::VectorXd& e1, const Eigen::VectorXd& p1,
                     const Eigen::VectorXd& p0, const Eigen::VectorXd& alpha1,
                     const Eigen::VectorXd& alpha0, EffectKind kind) {
  const Eigen::Index n = sample.n();
  const Eigen::Index d = family.d();
  check_lengths(sample, e1, "propensity");
  check_lengths(sample, p1, "arm-1 curve");
  check_lengths(sample, p0, "arm-0 curve");
  if (alpha1.size() != d || alpha0.size() != d) {
    throw ValidationError("inference: alpha length mismatch");
  }
  EifMatrix out;
  out.phi.resize(n, d);
  Eigen::VectorXd core1(n), core0(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w1 = (sample.t[i] == 1) ? 1.0 / e1[i] : 0.0;
    const double w0 = (sample.t[i] == 0) ? 1.0 / (1.0 - e1[i]) : 0.0;
    core1[i] = (sample.y[i] - p1[i]) * w1 + p1[i];
    core0[i] = (sample.y[i] - p0[i]) * w0 + p0[i];
  }
  for (Eigen::Index j = 0; j < d; ++j) {
    double j1, j0;
    eif_jacobian(kind, alpha1[j], alpha0[j], &j1, &j0);
    for (Eigen::Index i = 0; i < n; ++i) {
      out.phi(i, j) = family.masks(i, j) == 0.0
                          ? 0.0
                          : (j1 * (core1[i] - alpha1[j]) + j0 * (core0[i] - alpha0[j])) /
                                family.share[j];
    }
  }
  out.means = out.phi.colwise().mean();
  return out;
}

Eigen::MatrixXd covariance(const EifMatrix& eif) {
  const Eigen::Index n = eif.phi.rows();
  if (n == 0) throw ValidationError("covariance: empty influence matrix");
  Eigen::MatrixXd sigma = eif.phi.transpose() * eif.phi / static_cast<double>(n);
  for (Eigen::Index j = 0; j < sigma.rows(); ++j) {
    if (sigma(j, j) <= 0.0) {
      throw SolverError("covariance: influence column " + std::to_string(j) +
                        " has zero variance (degenerate)");
    }
  }
  return sigma;
}

namespace {

KappaEstimate kappa_impl(const Eigen::MatrixXd& sigma, double q, std::int64_t draws,
                         std::uint64_t seed, bool parallel) {
  const Eigen::Index d = sigma.rows();
  if (d == 0 || sigma.cols() != d) throw ValidationError("simultaneous_kappa: bad matrix shape");
  if (d > 256) throw ValidationError("simultaneous_kappa: more than 256 subgroups unsupported");
  if (!(q > 0.0 && q < 1.0)) throw ValidationError("simultaneous_kappa: q outside (0,1)");
  if (draws < 100) throw ValidationError("simultaneous_kappa: needs at least 100 draws");
  for (Eigen::Index j = 0; j < d; ++j) {
    if (!(sigma(j, j) > 0.0)) {
      throw SolverError("simultaneous_kappa: non-positive diagonal entry");
    }
  }

  // Correlation shape; the quantile is scale-invariant coordinate-wise.
  Eigen::MatrixXd corr(d, d);
  for (Eigen::Index a = 0; a < d; ++a) {
    for (Eigen::Index b = 0; b < d; ++b) {
      corr(a, b) = sigma(a, b) / std::sqrt(sigma(a, a) * sigma(b, b));
    }
  }

  KappaEstimate out;
  out.draws = draws;
  out.seed = seed;
  Eigen::MatrixXd chol_l;
  bool ok = false;
  for (double jitter : {0.0, 1e-12, 1e-10, 1e-8, 1e-6}) {
    Eigen::MatrixXd shifted = corr;
    for (Eigen::Index j = 0; j < d; ++j) shifted(j, j) += jitter;
    const Eigen::LLT<Eigen::MatrixXd> llt(shifted);
    if (llt.info() == Eigen::Success) {
      chol_l = llt.matrixL();
      out.jitter = jitter;
      ok = true;
      break;
    }
  }
  if (!ok) {
    throw SolverError("simultaneous_kappa: correlation matrix not factorable even with jitter");
  }

  const CounterRng rng(seed, "kappa-draws");
  std::vector<double> maxabs(static_cast<std::size_t>(draws));
  // Counter = (draw << 8) | coordinate: appending an independent coordinate
  // leaves the first d coordinates of every draw untouched.
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (parallel)
#endif
  for (std::int64_t r = 0; r < draws; ++r) {
    double g[256];
    for (Eigen::Index j = 0; j < d; ++j) {
      g[j] = rng.normal((static_cast<std::uint64_t>(r) << 8) | static_cast<std::uint64_t>(j));
    }
    double worst = 0.0;
    for (Eigen::Index a = 0; a < d; ++a) {
      double acc = 0.0;
      for (Eigen::Index b = 0; b <= a; ++b) acc += chol_l(a, b) * g[b];
      worst = std::max(worst, std::fabs(acc));
    }
    maxabs[static_cast<std::size_t>(r)] = worst;
  }
  (void)parallel;
  std::sort(maxabs.begin(), maxabs.end());
  out.kappa = quantile_type7(maxabs, 1.0 - q);
  return out;
}

}  // namespace

KappaEstimate simultaneous_kappa(const Eigen::MatrixXd& sigma, double q, std::int64_t draws,
                                 std::uint64_t seed, bool parallel) {
  return kappa_impl(sigma, q, draws, seed, parallel);
}

KappaEstimate simultaneous_kappa_serial(const Eigen::MatrixXd& sigma, double q,
                                        std::int64_t draws, std::uint64_t seed) {
  return kappa_impl(sigma, q, draws, seed, false);
}

IntervalSet build_intervals(const Eigen::VectorXd& point, const Eigen::MatrixXd& sigma,
                            Eigen::Index n, double q, std::int64_t draws, std::uint64_t seed,
                            bool parallel) {
  const Eigen::Index d = point.size();
  if (sigma.rows() != d || sigma.cols() != d) {
    throw ValidationError("build_intervals: covariance shape mismatch");
  }
  if (n <= 0) throw ValidationError("build_intervals: n must be positive");
  IntervalSet out;
  out.point = point;
  out.q = q;
  out.draws = draws;
  out.seed = seed;
  out.z_pointwise = normal_quantile(1.0 - q / 2.0);
  const KappaEstimate kap = simultaneous_kappa(sigma, q, draws, seed, parallel);
  out.kappa_raw = kap.kappa;
  out.jitter = kap.jitter;
  out.kappa = std::max(kap.kappa, out.z_pointwise);
  out.se.resize(d);
  out.pointwise_lo.resize(d);
  out.pointwise_hi.resize(d);
  out.simultaneous_lo.resize(d);
  out.simultaneous_hi.resize(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    out.se[j] = std::sqrt(sigma(j, j) / static_cast<double>(n));
    out.pointwise_lo[j] = point[j] - out.z_pointwise * out.se[j];
    out.pointwise_hi[j] = point[j] + out.z_pointwise * out.se[j];
    out.simultaneous_lo[j] = point[j] - out.kappa * out.se[j];
    out.simultaneous_hi[j] = point[j] + out.kappa * out.se[j];
  }
  return out;
}

}  // namespace itmle
