#include "itmle/csv.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace itmle {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

double parse_number(const std::string& cell, std::size_t file_line, const std::string& col) {
  if (cell.empty()) {
    throw ValidationError("csv: empty cell at line " + std::to_string(file_line) + ", column '" +
                          col + "'");
  }
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (end == cell.c_str() || *end != '\0' || errno == ERANGE || !std::isfinite(v)) {
    throw ValidationError("csv: cannot parse '" + cell + "' as a number at line " +
                          std::to_string(file_line) + ", column '" + col + "'");
  }
  return v;
}

bool is_group_column(const std::string& name, const std::string& prefix) {
  if (prefix.empty() || name.size() <= prefix.size()) return false;
  if (name.compare(0, prefix.size(), prefix) != 0) return false;
  return std::all_of(name.begin() + static_cast<long>(prefix.size()), name.end(),
                     [](unsigned char c) { return std::isdigit(c); });
}

double require_binary(double v, std::size_t file_line, const std::string& col) {
  if (v != 0.0 && v != 1.0) {
    std::ostringstream msg;
    msg << "csv: column '" << col << "' must be 0 or 1 but holds " << v << " at line "
        << file_line;
    throw ValidationError(msg.str());
  }
  return v;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

LoadedData load_sample(const std::string& path, const CsvOptions& options) {
  std::ifstream in(path);
  if (!in) throw ValidationError("csv: cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw ValidationError("csv: '" + path + "' is empty");
  const std::vector<std::string> header = split_row(line);
  {
    std::set<std::string> seen;
    for (const auto& h : header) {
      if (h.empty()) throw ValidationError("csv: empty column name in header of '" + path + "'");
      if (!seen.insert(h).second)
        throw ValidationError("csv: duplicate column '" + h + "' in '" + path + "'");
    }
  }

  auto column_index = [&](const std::string& name) -> long {
    const auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<long>(it - header.begin());
  };

  const long yi = column_index(options.y_col);
  if (yi < 0) throw ValidationError("csv: outcome column '" + options.y_col + "' not found");
  const long ti = column_index(options.t_col);
  if (ti < 0) throw ValidationError("csv: treatment column '" + options.t_col + "' not found");

  std::vector<long> group_idx;
  std::vector<std::string> group_labels;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (static_cast<long>(j) == yi || static_cast<long>(j) == ti) continue;
    if (is_group_column(header[j], options.group_prefix)) {
      group_idx.push_back(static_cast<long>(j));
      group_labels.push_back(header[j]);
    }
  }

  std::vector<long> x_idx;
  std::vector<std::string> x_names;
  if (options.x_cols.empty()) {
    for (std::size_t j = 0; j < header.size(); ++j) {
      const long lj = static_cast<long>(j);
      if (lj == yi || lj == ti) continue;
      if (std::find(group_idx.begin(), group_idx.end(), lj) != group_idx.end()) continue;
      x_idx.push_back(lj);
      x_names.push_back(header[j]);
    }
  } else {
    for (const auto& name : options.x_cols) {
      const long j = column_index(name);
      if (j < 0) throw ValidationError("csv: covariate column '" + name + "' not found");
      if (j == yi || j == ti)
        throw ValidationError("csv: covariate column '" + name + "' is the outcome/treatment");
      x_idx.push_back(j);
      x_names.push_back(name);
    }
  }

  std::vector<std::vector<double>> rows;
  std::size_t file_line = 1;
  while (std::getline(in, line)) {
    ++file_line;
    if (trim(line).empty()) continue;
    const std::vector<std::string> cells = split_row(line);
    if (cells.size() != header.size()) {
      throw ValidationError("csv: line " + std::to_string(file_line) + " has " +
                            std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(header.size()));
    }
    std::vector<double> row(header.size());
    for (std::size_t j = 0; j < cells.size(); ++j) {
      row[j] = parse_number(cells[j], file_line, header[j]);
    }
    require_binary(row[static_cast<std::size_t>(ti)], file_line, options.t_col);
    if (!options.continuous_outcome) {
      require_binary(row[static_cast<std::size_t>(yi)], file_line, options.y_col);
    }
    for (std::size_t g = 0; g < group_idx.size(); ++g) {
      require_binary(row[static_cast<std::size_t>(group_idx[g])], file_line, group_labels[g]);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ValidationError("csv: '" + path + "' has no data rows");

  const auto n = static_cast<Eigen::Index>(rows.size());
  LoadedData out;
  out.sample.continuous_outcome = options.continuous_outcome;
  out.sample.y.resize(n);
  out.sample.t.resize(n);
  out.sample.x.resize(n, static_cast<Eigen::Index>(x_idx.size()));
  out.sample.x_names = x_names;
  out.group_masks.resize(n, static_cast<Eigen::Index>(group_idx.size()));
  out.group_labels = group_labels;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i)];
    out.sample.y[i] = row[static_cast<std::size_t>(yi)];
    out.sample.t[i] = static_cast<int>(row[static_cast<std::size_t>(ti)]);
    for (std::size_t j = 0; j < x_idx.size(); ++j) {
      out.sample.x(i, static_cast<Eigen::Index>(j)) = row[static_cast<std::size_t>(x_idx[j])];
    }
    for (std::size_t g = 0; g < group_idx.size(); ++g) {
      out.group_masks(i, static_cast<Eigen::Index>(g)) =
          row[static_cast<std::size_t>(group_idx[g])];
    }
  }

  const int treated = out.sample.t.sum();
  if (treated == 0) throw ValidationError("csv: no treated units (t=1) in '" + path + "'");
  if (treated == n) throw ValidationError("csv: no control units (t=0) in '" + path + "'");
  return out;
}

void write_sample(const std::string& path, const ObservedSample& sample,
                  const SubgroupFamily* family) {
  std::ofstream out(path);
  if (!out) throw ValidationError("csv: cannot write '" + path + "'");
  std::vector<std::string> header{"y", "t"};
  header.insert(header.end(), sample.x_names.begin(), sample.x_names.end());
  if (family) header.insert(header.end(), family->labels.begin(), family->labels.end());
  out << join_csv_row(header) << '\n';
  for (Eigen::Index i = 0; i < sample.n(); ++i) {
    std::vector<std::string> row;
    row.reserve(header.size());
    row.push_back(format_double(sample.y[i]));
    row.push_back(std::to_string(sample.t[i]));
    for (Eigen::Index j = 0; j < sample.p(); ++j) row.push_back(format_double(sample.x(i, j)));
    if (family) {
      for (Eigen::Index j = 0; j < family->d(); ++j) {
        row.push_back(family->masks(i, j) != 0.0 ? "1" : "0");
      }
    }
    out << join_csv_row(row) << '\n';
  }
  if (!out) throw ValidationError("csv: write to '" + path + "' failed");
}

std::string join_csv_row(const std::vector<std::string>& fields) {
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) line += ',';
    line += fields[i];
  }
  return line;
}

}  // namespace itmle
