#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace itmle {

// Numerically stable inverse-logit; exact symmetry expit(-x) = 1 - expit(x).
double expit(double x);

// Inverse of expit on (0,1); caller is responsible for clipping first.
double logit(double p);

// log(1 + exp(x)) without overflow; the negative log-likelihood building block.
double log1pexp(double x);

double clip(double x, double lo, double hi);

// Standard normal CDF.
double normal_cdf(double x);

// Standard normal quantile (Wichura's AS241, double precision over (0,1)).
double normal_quantile(double p);

// Empirical quantile with linear interpolation between order statistics
// (the convention where h = (n-1)p selects x[floor(h)] blended with the next).
// `sorted` must be ascending and non-empty; p in [0,1].
double quantile_type7(std::span<const double> sorted, double p);

// Convenience: copies, sorts, and evaluates quantile_type7.
double quantile_type7_of(std::vector<double> values, double p);

}  // namespace itmle
