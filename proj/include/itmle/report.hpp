#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "itmle/inference.hpp"
#include "itmle/simulation.hpp"
#include "itmle/types.hpp"

namespace itmle {

// Leveled stderr logging gated by the SUBTARGET_LOG environment variable
// (error | warn | info | debug; default warn).
enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

LogLevel log_threshold();
void log_line(LogLevel level, const std::string& message);

std::string version_string();

// FNV-1a over the file's bytes, for input provenance in manifests.
std::uint64_t hash_file(const std::string& path);

// Writes via a temporary file + rename so readers never observe partial output.
void write_text_file(const std::string& path, const std::string& content);

nlohmann::json to_json(const Eigen::VectorXd& v);

// Per-subgroup rows of an interval set (point, se, pointwise and simultaneous
// bounds) plus the shared critical values.
nlohmann::json intervals_json(const IntervalSet& set, const std::vector<std::string>& labels);

nlohmann::json truth_json(const TrueParams& truth);

// Wall-clock timings deliberately stay out of result documents (they live in
// the run manifest), so identical configurations produce identical bytes.
nlohmann::json metrics_json(const EstimatorMetrics& metrics);

// replication,estimator,subgroup,estimate,lo,hi,covered
std::string replication_csv(const std::vector<ReplicationRow>& rows);

// One row per (n, estimator): the plotting axes for the summary figures.
std::string plot_csv(const std::vector<EstimatorMetrics>& metrics);

// Human-readable bias/SD/FWER table printed by the simulate command.
std::string render_metrics_table(const std::vector<EstimatorMetrics>& metrics);

}  // namespace itmle
