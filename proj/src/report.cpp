#include "itmle/report.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace itmle {

namespace {

LogLevel parse_level(const char* text) {
  if (text == nullptr) return LogLevel::Warn;
  const std::string level(text);
  if (level == "error") return LogLevel::Error;
  if (level == "warn" || level.empty()) return LogLevel::Warn;
  if (level == "info") return LogLevel::Info;
  if (level == "debug") return LogLevel::Debug;
  return LogLevel::Warn;
}

const char* level_name(LogLevel level) {
  switch (level) {
    case LogLevel::Error: return "error";
    case LogLevel::Warn: return "warn";
    case LogLevel::Info: return "info";
    case LogLevel::Debug: return "debug";
  }
  return "?";
}

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

LogLevel log_threshold() {
  static const LogLevel level = parse_level(std::getenv("SUBTARGET_LOG"));
  return level;
}

void log_line(LogLevel level, const std::string& message) {
  if (static_cast<int>(level) > static_cast<int>(log_threshold())) return;
  std::cerr << "[" << level_name(level) << "] " << message << "\n";
}

std::string version_string() { return "subtarget 0.1.0"; }

std::uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read file for hashing: " + path);
  std::uint64_t h = 14695981039346656037ULL;  // FNV-1a, same basis as fnv1a64
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  return h;
}

void write_text_file(const std::string& path, const std::string& content) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(target.parent_path(), ec);
  }
  const std::filesystem::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write file: " + tmp.string());
    out << content;
    if (!out) throw ValidationError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, target);
}

nlohmann::json to_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

nlohmann::json intervals_json(const IntervalSet& set, const std::vector<std::string>& labels) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index j = 0; j < set.point.size(); ++j) {
    rows.push_back({{"subgroup", labels[static_cast<std::size_t>(j)]},
                    {"estimate", set.point[j]},
                    {"se", set.se[j]},
                    {"pointwise_lo", set.pointwise_lo[j]},
                    {"pointwise_hi", set.pointwise_hi[j]},
                    {"simultaneous_lo", set.simultaneous_lo[j]},
                    {"simultaneous_hi", set.simultaneous_hi[j]}});
  }
  return {{"rows", rows},
          {"kappa", set.kappa},
          {"kappa_raw", set.kappa_raw},
          {"z_pointwise", set.z_pointwise},
          {"q", set.q},
          {"mc_draws", set.draws},
          {"kappa_seed", set.seed},
          {"cholesky_jitter", set.jitter}};
}

nlohmann::json truth_json(const TrueParams& truth) {
  return {{"design", truth.design},
          {"family", truth.family},
          {"labels", truth.labels},
          {"alpha1", to_json(truth.alpha1)},
          {"alpha0", to_json(truth.alpha0)},
          {"share", to_json(truth.share)},
          {"draws", truth.draws},
          {"seed", truth.seed},
          {"max_mc_se", truth.max_mc_se},
          {"from_cache", truth.from_cache}};
}

nlohmann::json metrics_json(const EstimatorMetrics& metrics) {
  return {{"estimator", metrics.estimator},
          {"n", metrics.n},
          {"scaled_bias", metrics.scaled_bias},
          {"scaled_sd", metrics.scaled_sd},
          {"fwer", metrics.fwer},
          {"fwer_mc_se", metrics.fwer_mc_se},
          {"bias", to_json(metrics.bias)},
          {"sd", to_json(metrics.sd)},
          {"pointwise_coverage", to_json(metrics.pointwise_coverage)},
          {"completed", metrics.completed},
          {"failures", metrics.failures}};
}

std::string replication_csv(const std::vector<ReplicationRow>& rows) {
  std::ostringstream out;
  out << "replication,estimator,subgroup,estimate,lo,hi,covered\n";
  for (const auto& row : rows) {
    out << row.replication << ',' << row.estimator << ',' << row.subgroup << ','
        << format_g17(row.estimate) << ',' << format_g17(row.lo) << ',' << format_g17(row.hi)
        << ',' << row.covered << '\n';
  }
  return out.str();
}

std::string plot_csv(const std::vector<EstimatorMetrics>& metrics) {
  std::ostringstream out;
  out << "n,estimator,scaled_bias,scaled_sd,fwer,fwer_mc_se,completed,failures\n";
  for (const auto& m : metrics) {
    out << m.n << ',' << m.estimator << ',' << format_g17(m.scaled_bias) << ','
        << format_g17(m.scaled_sd) << ',' << format_g17(m.fwer) << ',' << format_g17(m.fwer_mc_se)
        << ',' << m.completed << ',' << m.failures << '\n';
  }
  return out.str();
}

std::string render_metrics_table(const std::vector<EstimatorMetrics>& metrics) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-12s %8s %12s %12s %8s %10s %9s\n", "estimator", "n",
                "scaled_bias", "scaled_sd", "fwer", "fwer_mc_se", "failures");
  out << line;
  for (const auto& m : metrics) {
    std::snprintf(line, sizeof(line), "%-12s %8lld %12.4f %12.4f %8.4f %10.4f %9d\n",
                  m.estimator.c_str(), static_cast<long long>(m.n), m.scaled_bias, m.scaled_sd,
                  m.fwer, m.fwer_mc_se, m.failures);
    out << line;
  }
  return out.str();
}

}  // namespace itmle
