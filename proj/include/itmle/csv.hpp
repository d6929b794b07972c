#pragma once

#include <string>
#include <vector>

#include "itmle/types.hpp"

namespace itmle {

struct CsvOptions {
  std::string y_col = "y";
  std::string t_col = "t";
  std::vector<std::string> x_cols;  // empty = every remaining numeric column
  std::string group_prefix = "g";   // columns named <prefix><k> are membership flags
  bool continuous_outcome = false;
};

struct LoadedData {
  ObservedSample sample;
  // Membership columns found via the prefix, in file order (may be empty).
  Eigen::MatrixXd group_masks;
  std::vector<std::string> group_labels;
};

// Reads a header-first CSV. Errors name the offending row and column.
LoadedData load_sample(const std::string& path, const CsvOptions& options);

// Writes y, t, covariates and optional membership columns; round-trips with
// load_sample under default naming.
void write_sample(const std::string& path, const ObservedSample& sample,
                  const SubgroupFamily* family = nullptr);

// Minimal CSV row writer shared by the reporting code: quotes nothing, joins
// with commas; callers are responsible for field contents.
std::string join_csv_row(const std::vector<std::string>& fields);

}  // namespace itmle
