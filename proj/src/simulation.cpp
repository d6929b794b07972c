#include "itmle/simulation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "itmle/baselines.hpp"
#include "itmle/crossfit.hpp"
#include "itmle/inference.hpp"
#include "itmle/nuisance.hpp"
#include "itmle/rng.hpp"
#include "itmle/stats.hpp"
#include "itmle/subgroups.hpp"
#include "itmle/targeting.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace itmle {

namespace {

constexpr Eigen::Index kCovariates = 5;
constexpr std::uint64_t kCountersPerUnit = 8;  // 5 normals + T + Y + spare

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Lower Cholesky factor of the AR(1) covariance S_ij = 0.5^|i-j|.
Eigen::MatrixXd covariate_cholesky() {
  Eigen::MatrixXd sigma(kCovariates, kCovariates);
  for (Eigen::Index i = 0; i < kCovariates; ++i)
    for (Eigen::Index j = 0; j < kCovariates; ++j)
      sigma(i, j) = std::pow(0.5, std::abs(static_cast<double>(i - j)));
  return Eigen::LLT<Eigen::MatrixXd>(sigma).matrixL();
}

void draw_covariates(const CounterRng& rng, std::uint64_t unit, const Eigen::MatrixXd& chol,
                     Eigen::RowVectorXd* x) {
  Eigen::VectorXd z(kCovariates);
  for (Eigen::Index k = 0; k < kCovariates; ++k)
    z[k] = rng.normal(unit * kCountersPerUnit + static_cast<std::uint64_t>(k));
  *x = (chol * z).transpose();
}

// Population subgroup membership, shared by sampled data and oracle draws.
bool population_member(int d, int j, const Eigen::RowVectorXd& x) {
  if (d == 1) return true;
  if (d == 4) {
    static const double q10 = normal_quantile(0.10);
    static const double q90 = normal_quantile(0.90);
    switch (j) {
      case 0: return x[0] > q10;
      case 1: return x[1] > q10 && x[1] < q90;
      case 2: return x[2] + x[3] > -2.0;
      // The fourth group's published rule compares an indicator to -1, which
      // every unit satisfies; kept as the whole sample.
      case 3: return true;
    }
  }
  if (d == 10) {
    static const std::array<double, 11> cuts = [] {
      std::array<double, 11> c{};
      c[0] = -std::numeric_limits<double>::infinity();
      c[10] = std::numeric_limits<double>::infinity();
      for (int k = 1; k <= 9; ++k) c[static_cast<std::size_t>(k)] = normal_quantile(k / 10.0);
      return c;
    }();
    return x[0] > cuts[static_cast<std::size_t>(j)] && x[0] < cuts[static_cast<std::size_t>(j + 1)];
  }
  throw ValidationError("population families support d in {1, 4, 10}; got d=" +
                        std::to_string(d));
}

struct EstimatorOutput {
  Eigen::VectorXd alpha;
  Eigen::MatrixXd sigma;
  std::vector<bool> degenerate;
  double seconds = 0.0;
};

struct RepIntervals {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
  Eigen::VectorXd pointwise_lo;
  Eigen::VectorXd pointwise_hi;
};

// Interval construction tolerant of degenerate variance entries: coordinates
// whose influence rows collapsed to a constant get zero-width intervals (they
// carry no estimated sampling noise, so they count as misses unless exact).
RepIntervals guarded_intervals(const Eigen::VectorXd& alpha, const Eigen::MatrixXd& sigma,
                               const std::vector<bool>& degenerate, Eigen::Index n, double q,
                               std::int64_t draws, std::uint64_t seed, bool parallel) {
  const Eigen::Index d = alpha.size();
  RepIntervals out;
  out.lo = alpha;
  out.hi = alpha;
  out.pointwise_lo = alpha;
  out.pointwise_hi = alpha;

  std::vector<Eigen::Index> live;
  for (Eigen::Index j = 0; j < d; ++j)
    if (!degenerate[static_cast<std::size_t>(j)]) live.push_back(j);
  if (live.empty()) return out;

  if (static_cast<Eigen::Index>(live.size()) == d) {
    const IntervalSet set = build_intervals(alpha, sigma, n, q, draws, seed, parallel);
    out.lo = set.simultaneous_lo;
    out.hi = set.simultaneous_hi;
    out.pointwise_lo = set.pointwise_lo;
    out.pointwise_hi = set.pointwise_hi;
    return out;
  }

  Eigen::VectorXd alpha_live(static_cast<Eigen::Index>(live.size()));
  Eigen::MatrixXd sigma_live(static_cast<Eigen::Index>(live.size()),
                             static_cast<Eigen::Index>(live.size()));
  for (std::size_t a = 0; a < live.size(); ++a) {
    alpha_live[static_cast<Eigen::Index>(a)] = alpha[live[a]];
    for (std::size_t b = 0; b < live.size(); ++b)
      sigma_live(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
          sigma(live[a], live[b]);
  }
  const IntervalSet set = build_intervals(alpha_live, sigma_live, n, q, draws, seed, parallel);
  for (std::size_t a = 0; a < live.size(); ++a) {
    out.lo[live[a]] = set.simultaneous_lo[static_cast<Eigen::Index>(a)];
    out.hi[live[a]] = set.simultaneous_hi[static_cast<Eigen::Index>(a)];
    out.pointwise_lo[live[a]] = set.pointwise_lo[static_cast<Eigen::Index>(a)];
    out.pointwise_hi[live[a]] = set.pointwise_hi[static_cast<Eigen::Index>(a)];
  }
  return out;
}

std::vector<bool> diagonal_degeneracy(const Eigen::MatrixXd& sigma) {
  std::vector<bool> flags(static_cast<std::size_t>(sigma.rows()), false);
  for (Eigen::Index j = 0; j < sigma.rows(); ++j)
    if (sigma(j, j) <= 0.0) flags[static_cast<std::size_t>(j)] = true;
  return flags;
}

}  // namespace

const char* design_name(DesignKind kind) {
  switch (kind) {
    case DesignKind::Main: return "main";
    case DesignKind::Alternative: return "alternative";
    case DesignKind::AlternativeNull: return "alternative-null";
  }
  return "?";
}

DesignKind design_from_name(const std::string& name) {
  if (name == "main") return DesignKind::Main;
  if (name == "alt" || name == "alternative") return DesignKind::Alternative;
  if (name == "alt-null" || name == "alternative-null") return DesignKind::AlternativeNull;
  throw ValidationError("unknown design '" + name + "' (expected main or alt)");
}

double design_propensity(const Eigen::RowVectorXd& x) {
  return expit(x[0] - 0.5 * x[1] + 0.25 * x[2] + 0.1 * x[3]);
}

double design_outcome(DesignKind kind, const Eigen::RowVectorXd& x, int t) {
  switch (kind) {
    case DesignKind::Main:
      return expit(21.0 + t + 27.4 * x[0] + 13.7 * x[1] + 13.7 * x[2] + 13.7 * x[3]);
    case DesignKind::Alternative:
      return expit(t + x[0] + x[1] + x[2] + x[3]);
    case DesignKind::AlternativeNull:
      return expit(x[0] + x[1] + x[2] + x[3]);
  }
  return 0.0;
}

ObservedSample generate_design(DesignKind kind, Eigen::Index n, std::uint64_t seed) {
  if (n <= 0) throw ValidationError("generate_design: n must be positive");
  const Eigen::MatrixXd chol = covariate_cholesky();
  const CounterRng rng(seed, "design-draws");

  ObservedSample out;
  out.y.resize(n);
  out.t.resize(n);
  out.x.resize(n, kCovariates);
  out.x_names = {"x1", "x2", "x3", "x4", "x5"};
  Eigen::RowVectorXd x(kCovariates);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto unit = static_cast<std::uint64_t>(i);
    draw_covariates(rng, unit, chol, &x);
    out.x.row(i) = x;
    const int t = rng.uniform(unit * kCountersPerUnit + 5) < design_propensity(x) ? 1 : 0;
    out.t[i] = t;
    out.y[i] = rng.uniform(unit * kCountersPerUnit + 6) < design_outcome(kind, x, t) ? 1.0 : 0.0;
  }
  return out;
}

Eigen::MatrixXd population_masks(int d, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd masks = Eigen::MatrixXd::Zero(x.rows(), d);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::RowVectorXd row = x.row(i);
    for (int j = 0; j < d; ++j)
      if (population_member(d, j, row)) masks(i, j) = 1.0;
  }
  return masks;
}

std::vector<std::string> population_labels(int d) {
  if (d == 1) return {"all"};
  if (d == 4) return {"g1", "g2", "g3", "g4"};
  if (d == 10) {
    std::vector<std::string> labels;
    for (int j = 1; j <= 10; ++j) labels.push_back("dec" + std::to_string(j));
    return labels;
  }
  throw ValidationError("population families support d in {1, 4, 10}; got d=" +
                        std::to_string(d));
}

const char* population_family_name(int d) {
  if (d == 1) return "whole";
  if (d == 4) return "overlapping4";
  if (d == 10) return "deciles10";
  throw ValidationError("population families support d in {1, 4, 10}; got d=" +
                        std::to_string(d));
}

SubgroupFamily design_family(const ObservedSample& sample, int d) {
  return family_from_masks(sample, population_masks(d, sample.x), population_labels(d));
}

TrueParams true_parameters(DesignKind kind, int d, std::int64_t draws, std::uint64_t seed,
                           const std::string& cache_dir, bool parallel) {
  if (draws < 1000000)
    throw ValidationError("true_parameters: at least 1e6 oracle draws required");
  (void)population_family_name(d);  // validates d

  std::filesystem::path cache_file;
  if (!cache_dir.empty()) {
    std::ostringstream name;
    name << "truth_" << design_name(kind) << "_" << population_family_name(d) << "_draws" << draws
         << "_seed" << seed << ".json";
    cache_file = std::filesystem::path(cache_dir) / name.str();
    std::ifstream in(cache_file);
    if (in) {
      nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
      if (!doc.is_discarded() && doc.value("design", "") == design_name(kind) &&
          doc.value("family", "") == population_family_name(d) &&
          doc.value("draws", std::int64_t{0}) == draws &&
          doc.value("seed", std::uint64_t{0}) == seed &&
          doc.contains("alpha1") && doc["alpha1"].size() == static_cast<std::size_t>(d)) {
        TrueParams truth;
        truth.design = design_name(kind);
        truth.family = population_family_name(d);
        truth.labels = doc["labels"].get<std::vector<std::string>>();
        truth.alpha1.resize(d);
        truth.alpha0.resize(d);
        truth.share.resize(d);
        for (int j = 0; j < d; ++j) {
          truth.alpha1[j] = doc["alpha1"][static_cast<std::size_t>(j)].get<double>();
          truth.alpha0[j] = doc["alpha0"][static_cast<std::size_t>(j)].get<double>();
          truth.share[j] = doc["share"][static_cast<std::size_t>(j)].get<double>();
        }
        truth.draws = draws;
        truth.seed = seed;
        truth.max_mc_se = doc.value("max_mc_se", 0.0);
        truth.from_cache = true;
        return truth;
      }
    }
  }

  const Eigen::MatrixXd chol = covariate_cholesky();
  const CounterRng rng(seed, "truth-draws");

  // Blocked accumulation: each block reduces its draws locally; blocks are
  // combined in index order afterwards, so thread scheduling cannot change
  // the result.
  constexpr std::int64_t kBlock = 65536;
  const auto blocks = static_cast<Eigen::Index>((draws + kBlock - 1) / kBlock);
  Eigen::MatrixXd count = Eigen::MatrixXd::Zero(blocks, d);
  Eigen::MatrixXd sum1 = Eigen::MatrixXd::Zero(blocks, d);
  Eigen::MatrixXd sumsq1 = Eigen::MatrixXd::Zero(blocks, d);
  Eigen::MatrixXd sum0 = Eigen::MatrixXd::Zero(blocks, d);
  Eigen::MatrixXd sumsq0 = Eigen::MatrixXd::Zero(blocks, d);

#pragma omp parallel for schedule(static) if (parallel)
  for (Eigen::Index b = 0; b < blocks; ++b) {
    Eigen::RowVectorXd x(kCovariates);
    const std::int64_t lo = static_cast<std::int64_t>(b) * kBlock;
    const std::int64_t hi = std::min(draws, lo + kBlock);
    for (std::int64_t g = lo; g < hi; ++g) {
      draw_covariates(rng, static_cast<std::uint64_t>(g), chol, &x);
      const double p1 = design_outcome(kind, x, 1);
      const double p0 = design_outcome(kind, x, 0);
      for (int j = 0; j < d; ++j) {
        if (!population_member(d, j, x)) continue;
        count(b, j) += 1.0;
        sum1(b, j) += p1;
        sumsq1(b, j) += p1 * p1;
        sum0(b, j) += p0;
        sumsq0(b, j) += p0 * p0;
      }
    }
  }

  TrueParams truth;
  truth.design = design_name(kind);
  truth.family = population_family_name(d);
  truth.labels = population_labels(d);
  truth.alpha1.resize(d);
  truth.alpha0.resize(d);
  truth.share.resize(d);
  truth.draws = draws;
  truth.seed = seed;
  for (int j = 0; j < d; ++j) {
    double c = 0.0;
    double s1 = 0.0;
    double q1 = 0.0;
    double s0 = 0.0;
    double q0 = 0.0;
    for (Eigen::Index b = 0; b < blocks; ++b) {
      c += count(b, j);
      s1 += sum1(b, j);
      q1 += sumsq1(b, j);
      s0 += sum0(b, j);
      q0 += sumsq0(b, j);
    }
    if (c <= 1.0)
      throw SolverError("true_parameters: subgroup '" + truth.labels[static_cast<std::size_t>(j)] +
                        "' received no oracle draws");
    truth.alpha1[j] = s1 / c;
    truth.alpha0[j] = s0 / c;
    truth.share[j] = c / static_cast<double>(draws);
    const double var1 = std::max(0.0, q1 / c - truth.alpha1[j] * truth.alpha1[j]);
    const double var0 = std::max(0.0, q0 / c - truth.alpha0[j] * truth.alpha0[j]);
    truth.max_mc_se = std::max({truth.max_mc_se, std::sqrt(var1 / c), std::sqrt(var0 / c)});
  }

  if (!cache_file.empty()) {
    nlohmann::json doc;
    doc["schema"] = 1;
    doc["design"] = truth.design;
    doc["family"] = truth.family;
    doc["draws"] = truth.draws;
    doc["seed"] = truth.seed;
    doc["labels"] = truth.labels;
    doc["alpha1"] = std::vector<double>(truth.alpha1.data(), truth.alpha1.data() + d);
    doc["alpha0"] = std::vector<double>(truth.alpha0.data(), truth.alpha0.data() + d);
    doc["share"] = std::vector<double>(truth.share.data(), truth.share.data() + d);
    doc["max_mc_se"] = truth.max_mc_se;
    std::error_code ec;
    std::filesystem::create_directories(cache_file.parent_path(), ec);
    std::ofstream out(cache_file);
    if (out) out << doc.dump(2) << "\n";
  }
  return truth;
}

SimulationReport run_monte_carlo(const MonteCarloConfig& config) {
  config.estimation.validate();
  if (config.replications < 1) throw ValidationError("simulate: replications must be positive");
  if (config.sizes.empty()) throw ValidationError("simulate: at least one sample size required");
  for (const Eigen::Index n : config.sizes)
    if (n < 50) throw ValidationError("simulate: sample sizes below 50 are not supported");
  if (config.estimators.empty()) throw ValidationError("simulate: no estimators requested");
  if (config.arm != 0 && config.arm != 1) throw ValidationError("arm must be 0 or 1");
  static const std::vector<std::string> known = {"itmle", "cv-itmle", "dr",    "glm",
                                                 "ipw",   "tmle-single", "oracle"};
  for (const auto& name : config.estimators)
    if (std::find(known.begin(), known.end(), name) == known.end())
      throw ValidationError(
          "unknown estimator '" + name +
          "' (valid: itmle, cv-itmle, dr, glm, ipw, tmle-single)");
  if (config.misspecification != "none" && config.misspecification != "propensity" &&
      config.misspecification != "outcome")
    throw ValidationError("misspecification must be none, propensity, or outcome");

  LearnerSpec prop_learner;
  prop_learner.kind = config.misspecification == "propensity" ? LearnerKind::Constant
                                                              : LearnerKind::Logistic;
  prop_learner.regularization = config.ridge;
  LearnerSpec out_learner;
  out_learner.kind =
      config.misspecification == "outcome" ? LearnerKind::Constant : LearnerKind::Logistic;
  out_learner.regularization = config.ridge;

  SimulationReport report;
  report.truth = true_parameters(config.design, config.d, config.truth_draws, config.truth_seed,
                                 config.truth_cache_dir, config.parallel);
  const Eigen::VectorXd truth_arm =
      config.arm == 1 ? report.truth.alpha1 : report.truth.alpha0;
  const Eigen::Index d = config.d;
  const auto est_count = config.estimators.size();

  for (const Eigen::Index n : config.sizes) {
    struct Tally {
      std::vector<Eigen::VectorXd> estimates;
      std::vector<int> misses;                    // simultaneous, per completed rep
      std::vector<Eigen::VectorXd> pointwise;     // 0/1 per subgroup per completed rep
      int failures = 0;
      double seconds = 0.0;
    };
    std::vector<Tally> tallies(est_count);

    for (int rep = 0; rep < config.replications; ++rep) {
      const std::uint64_t rep_seed = derive_seed(
          config.estimation.seed, "replication-n" + std::to_string(n), static_cast<std::uint64_t>(rep));
      const ObservedSample sample = generate_design(config.design, n, rep_seed);

      SubgroupFamily family;
      NuisanceFit nuisance;
      bool rep_ok = true;
      std::string rep_failure;
      try {
        family = design_family(sample, static_cast<int>(d));
        nuisance = fit_nuisance(sample, prop_learner, out_learner, config.estimation);
      } catch (const std::exception& e) {
        rep_ok = false;
        rep_failure = e.what();
      }
      if (!rep_ok) {
        report.replication_failures += 1;
        for (std::size_t e = 0; e < est_count; ++e) tallies[e].failures += 1;
        if (report.failure_messages.size() < 20)
          report.failure_messages.push_back("n=" + std::to_string(n) + " rep=" +
                                            std::to_string(rep) + " (all estimators): " +
                                            rep_failure);
        continue;
      }

      for (std::size_t e = 0; e < est_count; ++e) {
        const std::string& name = config.estimators[e];
        EstimatorOutput out;
        try {
          const auto start = Clock::now();
          if (name == "itmle") {
            const TargetedFit fit = itmle(sample, family, config.arm, nuisance, config.estimation);
            const EifMatrix eif = eif_risk(sample, family, config.arm,
                                           nuisance.arm_propensity(config.arm), fit.p_updated,
                                           fit.alpha);
            out.alpha = fit.alpha;
            out.sigma = covariance(eif);
            out.seconds = seconds_since(start);
            out.degenerate = diagonal_degeneracy(out.sigma);
          } else if (name == "cv-itmle") {
            EstimationConfig cv = config.estimation;
            cv.seed = rep_seed;  // fold plans vary across replications
            const CrossFitResult fit =
                cv_itmle(sample, family, config.arm, prop_learner, out_learner, cv);
            out.alpha = fit.alpha;
            out.sigma = covariance(fit.pooled);
            out.seconds = seconds_since(start);
            out.degenerate = diagonal_degeneracy(out.sigma);
          } else if (name == "oracle") {
            out.alpha = truth_arm;
            out.sigma = Eigen::MatrixXd::Identity(d, d);
            out.seconds = seconds_since(start);
            out.degenerate.assign(static_cast<std::size_t>(d), false);
          } else {
            BaselineEstimate base;
            if (name == "dr") {
              base = estimate_dr(sample, family, config.arm, nuisance);
            } else if (name == "glm") {
              base = estimate_glm(sample, family, config.arm, nuisance);
            } else if (name == "ipw") {
              base = estimate_ipw(sample, family, config.arm, nuisance);
            } else {
              base = estimate_tmle_single(sample, family, config.arm, prop_learner, out_learner,
                                          config.estimation);
            }
            out.alpha = base.alpha;
            out.sigma = base.sigma;
            out.degenerate = base.degenerate;
            out.seconds = base.seconds;
          }
        } catch (const std::exception& ex) {
          tallies[e].failures += 1;
          if (report.failure_messages.size() < 20)
            report.failure_messages.push_back("n=" + std::to_string(n) + " rep=" +
                                              std::to_string(rep) + " " + name + ": " + ex.what());
          continue;
        }

        const RepIntervals ivals = guarded_intervals(
            out.alpha, out.sigma, out.degenerate, n, config.estimation.alpha,
            config.estimation.mc_draws, derive_seed(rep_seed, "kappa", e), config.parallel);

        bool miss = false;
        Eigen::VectorXd pcover(d);
        for (Eigen::Index j = 0; j < d; ++j) {
          const bool cov = ivals.lo[j] <= truth_arm[j] && truth_arm[j] <= ivals.hi[j];
          miss = miss || !cov;
          pcover[j] = (ivals.pointwise_lo[j] <= truth_arm[j] &&
                       truth_arm[j] <= ivals.pointwise_hi[j])
                          ? 1.0
                          : 0.0;
          ReplicationRow row;
          row.n = n;
          row.replication = rep;
          row.estimator = name;
          row.subgroup = report.truth.labels[static_cast<std::size_t>(j)];
          row.estimate = out.alpha[j];
          row.lo = ivals.lo[j];
          row.hi = ivals.hi[j];
          row.covered = cov ? 1 : 0;
          report.rows.push_back(std::move(row));
        }
        tallies[e].estimates.push_back(out.alpha);
        tallies[e].misses.push_back(miss ? 1 : 0);
        tallies[e].pointwise.push_back(pcover);
        tallies[e].seconds += out.seconds;
      }
    }

    for (std::size_t e = 0; e < est_count; ++e) {
      const Tally& tally = tallies[e];
      EstimatorMetrics metrics;
      metrics.estimator = config.estimators[e];
      metrics.n = n;
      metrics.failures = tally.failures;
      metrics.completed = static_cast<int>(tally.estimates.size());
      metrics.estimator_seconds = tally.seconds;
      metrics.bias = Eigen::VectorXd::Zero(d);
      metrics.sd = Eigen::VectorXd::Zero(d);
      metrics.pointwise_coverage = Eigen::VectorXd::Zero(d);
      if (metrics.completed > 0) {
        const auto m = static_cast<double>(metrics.completed);
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
        for (const auto& est : tally.estimates) mean += est;
        mean /= m;
        metrics.bias = mean - truth_arm;
        if (metrics.completed > 1) {
          Eigen::VectorXd ss = Eigen::VectorXd::Zero(d);
          for (const auto& est : tally.estimates)
            ss += (est - mean).cwiseProduct(est - mean);
          metrics.sd = (ss / (m - 1.0)).cwiseSqrt();
        }
        for (const auto& pc : tally.pointwise) metrics.pointwise_coverage += pc;
        metrics.pointwise_coverage /= m;
        int misses = 0;
        for (const int flag : tally.misses) misses += flag;
        metrics.fwer = misses / m;
        metrics.fwer_mc_se = std::sqrt(metrics.fwer * (1.0 - metrics.fwer) / m);
        const double root_n = std::sqrt(static_cast<double>(n));
        metrics.scaled_bias = root_n * metrics.bias.cwiseAbs().sum();
        metrics.scaled_sd = root_n * metrics.sd.sum();
      }
      report.metrics.push_back(std::move(metrics));
    }
  }
  return report;
}

}  // namespace itmle
