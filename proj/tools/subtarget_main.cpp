// subtarget: estimation of per-subgroup treatment-arm means and effect
// measures with simultaneous confidence intervals, plus a Monte Carlo study
// harness and a timing benchmark. Subcommands: estimate, simulate, benchmark.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "itmle/baselines.hpp"
#include "itmle/crossfit.hpp"
#include "itmle/csv.hpp"
#include "itmle/inference.hpp"
#include "itmle/nuisance.hpp"
#include "itmle/report.hpp"
#include "itmle/rng.hpp"
#include "itmle/simulation.hpp"
#include "itmle/subgroups.hpp"
#include "itmle/targeting.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

using nlohmann::json;

struct CommonFlags {
  std::string output_dir = ".";
  double alpha = 0.05;
  std::int64_t mc_draws = 200000;
  int max_iter = 20;
  double tol = 1e-6;
  double gamma_tol = 1e-4;
  double truncate = 1e-3;
  int crossfit = 1;
  std::uint64_t seed = 1;
  int threads = 1;
  double ridge = 0.0;
};

void add_common(CLI::App* cmd, CommonFlags* flags) {
  cmd->add_option("--output-dir", flags->output_dir, "Directory for result files");
  cmd->add_option("--alpha", flags->alpha, "Simultaneous error budget q");
  cmd->add_option("--mc-draws", flags->mc_draws, "Monte Carlo draws for the critical value");
  cmd->add_option("--max-iter", flags->max_iter, "Targeting iteration cap");
  cmd->add_option("--tol", flags->tol, "Score-norm convergence tolerance");
  cmd->add_option("--gamma-tol", flags->gamma_tol,
                  "Stop when the step coefficient falls below this (0 disables)");
  cmd->add_option("--truncate", flags->truncate, "Propensity truncation level");
  cmd->add_option("--crossfit", flags->crossfit, "Number of cross-fitting folds (1 = off)");
  cmd->add_option("--seed", flags->seed, "Master seed; all streams derive from it");
  cmd->add_option("--threads", flags->threads, "Worker threads for parallel kernels");
  cmd->add_option("--ridge", flags->ridge, "Ridge strength for logistic learners");
}

itmle::EstimationConfig make_config(const CommonFlags& flags) {
  itmle::EstimationConfig config;
  config.max_iterations = flags.max_iter;
  config.score_tolerance = flags.tol;
  config.gamma_tolerance = flags.gamma_tol;
  config.propensity_floor = flags.truncate;
  config.alpha = flags.alpha;
  config.mc_draws = flags.mc_draws;
  config.folds = flags.crossfit;
  config.seed = flags.seed;
  config.threads = flags.threads;
  config.validate();
  return config;
}

json common_json(const CommonFlags& flags) {
  return {{"output_dir", flags.output_dir}, {"alpha", flags.alpha},
          {"mc_draws", flags.mc_draws},     {"max_iter", flags.max_iter},
          {"tol", flags.tol},               {"gamma_tol", flags.gamma_tol},
          {"truncate", flags.truncate},     {"crossfit", flags.crossfit},
          {"seed", flags.seed},             {"threads", flags.threads},
          {"ridge", flags.ridge}};
}

void apply_threads(int threads) {
  if (threads < 1) throw itmle::ValidationError("--threads must be at least 1");
#ifdef _OPENMP
  omp_set_num_threads(threads);
#endif
}

std::string path_join(const std::string& dir, const std::string& name) {
  if (dir.empty() || dir == ".") return name;
  return dir + "/" + name;
}

void write_manifest(const std::string& output_dir, const std::string& command,
                    const json& config, const json& input_hashes, double wall_seconds) {
  json manifest;
  manifest["schema"] = 1;
  manifest["tool"] = itmle::version_string();
  manifest["command"] = command;
  manifest["config"] = config;
  manifest["input_hashes"] = input_hashes;
  manifest["seed_derivation"] =
      "child = mix(mix(seed) ^ fnv1a(component) ^ mix(index)); draws are pure "
      "functions of (seed, stream, counter)";
  manifest["wall_time_seconds"] = wall_seconds;
  itmle::write_text_file(path_join(output_dir, "manifest.json"), manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

struct EstimateFlags {
  CommonFlags common;
  std::string input;
  std::string y_col = "y";
  std::string t_col = "t";
  std::vector<std::string> x_cols;
  std::string group_prefix = "g";
  std::string groups_file;
  std::string effect = "risk";
  int arm = 1;
  std::string learner = "logistic";
};

int run_estimate(const EstimateFlags& flags) {
  const auto start = std::chrono::steady_clock::now();
  apply_threads(flags.common.threads);
  const itmle::EstimationConfig config = make_config(flags.common);
  const itmle::EffectKind kind = itmle::effect_from_name(flags.effect);
  if (flags.arm != 0 && flags.arm != 1)
    throw itmle::ValidationError("--arm must be 0 or 1");

  itmle::CsvOptions csv;
  csv.y_col = flags.y_col;
  csv.t_col = flags.t_col;
  csv.x_cols = flags.x_cols;
  csv.group_prefix = flags.group_prefix;
  const itmle::LoadedData data = itmle::load_sample(flags.input, csv);
  itmle::log_line(itmle::LogLevel::Info,
                  "loaded " + std::to_string(data.sample.n()) + " rows, " +
                      std::to_string(data.sample.p()) + " covariates");

  itmle::SubgroupFamily family;
  if (!flags.groups_file.empty()) {
    std::ifstream in(flags.groups_file);
    if (!in) throw itmle::ValidationError("cannot read groups file: " + flags.groups_file);
    std::stringstream buffer;
    buffer << in.rdbuf();
    family = itmle::build_subgroups(data.sample, itmle::parse_subgroup_specs(buffer.str()));
  } else if (data.group_masks.cols() > 0) {
    family = itmle::make_family(data.sample, data.group_masks, data.group_labels);
  } else {
    throw itmle::ValidationError(
        "no subgroups: provide membership columns (--group-prefix) or --groups-file");
  }

  itmle::LearnerSpec learner;
  if (flags.learner == "logistic") {
    learner.kind = itmle::LearnerKind::Logistic;
  } else if (flags.learner == "constant") {
    learner.kind = itmle::LearnerKind::Constant;
  } else {
    throw itmle::ValidationError("--learner must be logistic or constant");
  }
  learner.regularization = flags.common.ridge;

  json result;
  result["schema"] = 1;
  result["tool"] = itmle::version_string();
  result["n"] = data.sample.n();
  result["d"] = family.d();
  result["labels"] = family.labels;
  result["share"] = itmle::to_json(family.share);
  result["effect"] = flags.effect;
  result["learner"] = learner.tag();
  result["folds"] = config.folds;
  result["seed"] = config.seed;

  const std::uint64_t kappa_seed = itmle::derive_seed(config.seed, "kappa", 0);
  const bool parallel = flags.common.threads > 1;

  itmle::IntervalSet intervals;
  if (kind == itmle::EffectKind::Risk) {
    result["arm"] = flags.arm;
    const itmle::CrossFitResult fit =
        itmle::cv_itmle(data.sample, family, flags.arm, learner, learner, config);
    intervals = itmle::build_intervals(fit.alpha, itmle::covariance(fit.pooled), data.sample.n(),
                                       config.alpha, config.mc_draws, kappa_seed, parallel);
    result["converged"] = fit.converged;
    result["score_norm"] = fit.score_norm;
    json folds = json::array();
    for (const auto& fold : fit.fold_fits) {
      folds.push_back({{"iterations", fold.iterations},
                       {"score_norm", fold.score_norm},
                       {"converged", fold.converged},
                       {"stop_reason", fold.stop_reason}});
    }
    result["folds_detail"] = folds;
    result[flags.arm == 1 ? "alpha1" : "alpha0"] = itmle::to_json(fit.alpha);
    int iterations = 0;
    for (const auto& fold : fit.fold_fits) iterations = std::max(iterations, fold.iterations);
    result["iterations"] = iterations;
  } else {
    const itmle::CrossFitEffects fit =
        itmle::cv_effects(data.sample, family, kind, learner, learner, config);
    intervals = itmle::build_intervals(fit.effect, itmle::covariance(fit.pooled), data.sample.n(),
                                       config.alpha, config.mc_draws, kappa_seed, parallel);
    result["converged"] = fit.converged;
    result["score_norm"] = fit.score_norm;
    result["alpha1"] = itmle::to_json(fit.alpha1);
    result["alpha0"] = itmle::to_json(fit.alpha0);
    json folds = json::array();
    int iterations = 0;
    for (const auto& fold : fit.fold_fits) {
      folds.push_back({{"iterations", fold.iterations},
                       {"score_norm", fold.score_norm},
                       {"converged", fold.converged},
                       {"stop_reason", fold.stop_reason}});
      iterations = std::max(iterations, fold.iterations);
    }
    result["folds_detail"] = folds;
    result["iterations"] = iterations;
  }
  result["intervals"] = itmle::intervals_json(intervals, family.labels);

  const std::string text = result.dump(2) + "\n";
  itmle::write_text_file(path_join(flags.common.output_dir, "estimate.json"), text);
  std::cout << text;

  json hashes;
  hashes["input"] = itmle::hash_file(flags.input);
  if (!flags.groups_file.empty()) hashes["groups_file"] = itmle::hash_file(flags.groups_file);
  json config_echo = common_json(flags.common);
  config_echo["input"] = flags.input;
  config_echo["y_col"] = flags.y_col;
  config_echo["t_col"] = flags.t_col;
  config_echo["x_cols"] = flags.x_cols;
  config_echo["group_prefix"] = flags.group_prefix;
  config_echo["groups_file"] = flags.groups_file;
  config_echo["effect"] = flags.effect;
  config_echo["arm"] = flags.arm;
  config_echo["learner"] = flags.learner;
  write_manifest(flags.common.output_dir, "estimate", config_echo, hashes,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  return 0;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateFlags {
  CommonFlags common;
  std::string design = "alt";
  std::vector<std::int64_t> sizes = {500};
  int d = 4;
  int reps = 200;
  std::vector<std::string> estimators = {"itmle"};
  std::string misspec = "none";
  int arm = 1;
  std::int64_t truth_draws = 10000000;
};

int run_simulate(const SimulateFlags& flags) {
  const auto start = std::chrono::steady_clock::now();
  apply_threads(flags.common.threads);

  itmle::MonteCarloConfig mc;
  mc.design = itmle::design_from_name(flags.design);
  mc.d = flags.d;
  mc.sizes.clear();
  for (const auto n : flags.sizes) mc.sizes.push_back(static_cast<Eigen::Index>(n));
  mc.replications = flags.reps;
  mc.estimators = flags.estimators;
  mc.misspecification = flags.misspec;
  mc.estimation = make_config(flags.common);
  mc.arm = flags.arm;
  mc.ridge = flags.common.ridge > 0.0 ? flags.common.ridge : 1e-3;
  mc.truth_draws = flags.truth_draws;
  mc.truth_seed = itmle::derive_seed(20240915, "truth-oracle", 0);
  mc.truth_cache_dir = path_join(flags.common.output_dir, "truth-cache");
  mc.parallel = flags.common.threads > 1;

  const itmle::SimulationReport report = itmle::run_monte_carlo(mc);

  json config_echo = common_json(flags.common);
  config_echo["design"] = flags.design;
  config_echo["n"] = flags.sizes;
  config_echo["d"] = flags.d;
  config_echo["reps"] = flags.reps;
  config_echo["estimators"] = flags.estimators;
  config_echo["misspec"] = flags.misspec;
  config_echo["arm"] = flags.arm;
  config_echo["truth_draws"] = flags.truth_draws;

  json doc;
  doc["schema"] = 1;
  doc["tool"] = itmle::version_string();
  doc["config"] = config_echo;
  doc["truth"] = itmle::truth_json(report.truth);
  json metrics = json::array();
  for (const auto& m : report.metrics) metrics.push_back(itmle::metrics_json(m));
  doc["metrics"] = metrics;
  doc["replication_failures"] = report.replication_failures;
  doc["failure_messages"] = report.failure_messages;
  itmle::write_text_file(path_join(flags.common.output_dir, "simulate.json"), doc.dump(2) + "\n");

  // Per-replication rows, one file per sample size (fixed column set).
  for (const auto n : mc.sizes) {
    std::vector<itmle::ReplicationRow> rows;
    for (const auto& row : report.rows)
      if (row.n == n) rows.push_back(row);
    itmle::write_text_file(
        path_join(flags.common.output_dir, "replications_n" + std::to_string(n) + ".csv"),
        itmle::replication_csv(rows));
  }
  itmle::write_text_file(path_join(flags.common.output_dir, "plot.csv"),
                         itmle::plot_csv(report.metrics));

  std::cout << itmle::render_metrics_table(report.metrics);

  write_manifest(flags.common.output_dir, "simulate", config_echo, json::object(),
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  return 0;
}

// ---------------------------------------------------------------------------
// benchmark
// ---------------------------------------------------------------------------

struct BenchmarkFlags {
  CommonFlags common;
  std::string design = "alt";
  std::int64_t n = 5000;
  int d = 10;
  int reps = 3;
};

int run_benchmark(const BenchmarkFlags& flags) {
  const auto start = std::chrono::steady_clock::now();
  apply_threads(flags.common.threads);
  itmle::EstimationConfig config = make_config(flags.common);

  const itmle::DesignKind kind = itmle::design_from_name(flags.design);
  const itmle::ObservedSample sample = itmle::generate_design(
      kind, static_cast<Eigen::Index>(flags.n), itmle::derive_seed(config.seed, "benchmark", 0));
  const itmle::SubgroupFamily family = itmle::design_family(sample, flags.d);

  itmle::LearnerSpec learner;
  learner.regularization = flags.common.ridge > 0.0 ? flags.common.ridge : 1e-3;

  const auto run_itmle = [&] {
    const itmle::NuisanceFit nuisance = itmle::fit_nuisance(sample, learner, learner, config);
    return itmle::itmle(sample, family, 1, nuisance, config);
  };
  const auto run_single = [&] {
    return itmle::estimate_tmle_single(sample, family, 1, learner, learner, config);
  };

  // Warm-up pass (untimed) so first-touch costs do not land on rep 0.
  (void)run_itmle();
  (void)run_single();

  std::vector<double> itmle_secs;
  std::vector<double> single_secs;
  std::ostringstream csv;
  csv << "rep,itmle_seconds,tmle_single_seconds,ratio\n";
  for (int rep = 0; rep < flags.reps; ++rep) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)run_itmle();
    const auto t1 = std::chrono::steady_clock::now();
    (void)run_single();
    const auto t2 = std::chrono::steady_clock::now();
    const double a = std::chrono::duration<double>(t1 - t0).count();
    const double b = std::chrono::duration<double>(t2 - t1).count();
    itmle_secs.push_back(a);
    single_secs.push_back(b);
    csv << rep << ',' << a << ',' << b << ',' << (b > 0.0 ? a / b : 0.0) << '\n';
  }
  const auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t mid = v.size() / 2;
    return v.size() % 2 == 1 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
  };
  const double med_a = median(itmle_secs);
  const double med_b = median(single_secs);
  csv << "median," << med_a << ',' << med_b << ',' << (med_b > 0.0 ? med_a / med_b : 0.0) << '\n';

  const std::string text = csv.str();
  itmle::write_text_file(path_join(flags.common.output_dir, "benchmark.csv"), text);
  std::cout << text;

  json config_echo = common_json(flags.common);
  config_echo["design"] = flags.design;
  config_echo["n"] = flags.n;
  config_echo["d"] = flags.d;
  config_echo["reps"] = flags.reps;
  write_manifest(flags.common.output_dir, "benchmark", config_echo, json::object(),
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"subtarget: per-subgroup treatment-effect estimation with simultaneous intervals"};
  app.require_subcommand(1);

  EstimateFlags est;
  auto* cmd_est = app.add_subcommand("estimate", "Estimate subgroup effects from a CSV dataset");
  cmd_est->add_option("--input", est.input, "Input CSV")->required();
  cmd_est->add_option("--y-col", est.y_col, "Outcome column");
  cmd_est->add_option("--t-col", est.t_col, "Treatment column");
  cmd_est->add_option("--x-cols", est.x_cols, "Covariate columns (default: all remaining)")
      ->delimiter(',');
  cmd_est->add_option("--group-prefix", est.group_prefix, "Membership column prefix");
  cmd_est->add_option("--groups-file", est.groups_file, "Subgroup predicate definitions");
  cmd_est->add_option("--effect", est.effect, "risk | ard | rr | or");
  cmd_est->add_option("--arm", est.arm, "Arm for --effect risk");
  cmd_est->add_option("--learner", est.learner, "logistic | constant");
  add_common(cmd_est, &est.common);

  SimulateFlags sim;
  auto* cmd_sim = app.add_subcommand("simulate", "Monte Carlo bias/SD/FWER study");
  cmd_sim->add_option("--design", sim.design, "main | alt");
  cmd_sim->add_option("--n", sim.sizes, "Sample sizes (comma separated)")->delimiter(',');
  cmd_sim->add_option("--d", sim.d, "Subgroup family width: 1, 4, or 10");
  cmd_sim->add_option("--reps", sim.reps, "Replications per sample size");
  cmd_sim->add_option("--estimators", sim.estimators,
                      "itmle, cv-itmle, dr, glm, ipw, tmle-single")
      ->delimiter(',');
  cmd_sim->add_option("--misspec", sim.misspec, "none | propensity | outcome");
  cmd_sim->add_option("--arm", sim.arm, "Arm whose means are studied");
  cmd_sim->add_option("--truth-draws", sim.truth_draws, "Oracle draws for ground truth");
  add_common(cmd_sim, &sim.common);

  BenchmarkFlags bench;
  auto* cmd_bench = app.add_subcommand("benchmark", "Time itmle vs per-subgroup re-targeting");
  cmd_bench->add_option("--design", bench.design, "main | alt");
  cmd_bench->add_option("--n", bench.n, "Sample size");
  cmd_bench->add_option("--d", bench.d, "Subgroup family width: 1, 4, or 10");
  cmd_bench->add_option("--reps", bench.reps, "Timed repetitions");
  add_common(cmd_bench, &bench.common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (cmd_est->parsed()) return run_estimate(est);
    if (cmd_sim->parsed()) return run_simulate(sim);
    return run_benchmark(bench);
  } catch (const itmle::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const itmle::SolverError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
}
