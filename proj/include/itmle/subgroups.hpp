#pragma once

#include <string>
#include <vector>

#include "itmle/types.hpp"

namespace itmle {

// Threshold-predicate subgroup definitions.
//
// Grammar (one definition per line, '#' starts a comment):
//   definition := label ':' conjunction | label ':' 'all'
//   conjunction := comparison ('&' comparison)*
//   comparison := linear op bound
//   linear := term (('+'|'-') term)*
//   term := [number '*'] covariate_name
//   op := '<' | '<=' | '>' | '>='
//   bound := number | 'q' number      (qP = empirical P-quantile of the linear form)
//
// Examples: "g1: x1 > q0.1", "g2: x2 > q0.1 & x2 < q0.9", "g3: x3 + x4 > -2",
// "g4: all". Quantile bounds use the loaded sample's empirical distribution with
// linear interpolation (the same convention as quantile_type7).

struct SubgroupSpec {
  std::string label;
  std::string expression;
};

// Parses definitions; throws ValidationError with line numbers on bad syntax.
std::vector<SubgroupSpec> parse_subgroup_specs(const std::string& text);

// Evaluates the specs against a sample and validates the resulting family.
SubgroupFamily build_subgroups(const ObservedSample& sample,
                               const std::vector<SubgroupSpec>& specs);

// Family from explicit membership columns (CSV path); validates non-emptiness.
SubgroupFamily family_from_masks(const ObservedSample& sample, const Eigen::MatrixXd& masks,
                                 const std::vector<std::string>& labels);

// Ten disjoint bins of `values` between consecutive empirical deciles,
// open at interior boundaries, unbounded at the ends.
Eigen::MatrixXd decile_masks(const Eigen::VectorXd& values);

}  // namespace itmle
