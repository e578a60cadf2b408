#pragma once

#include <span>
#include <vector>

#include "pathforge/common.hpp"

namespace pathforge {

struct Interval {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  bool degenerate = false;  // fewer than 2 samples or no spread: (mean, mean, mean)
};

double sample_mean(std::span<const double> x);
/// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 values.
double sample_sd(std::span<const double> x);
/// Linear-interpolation quantile of sorted data (type 7).
double quantile_sorted(std::span<const double> sorted, double q);

/// Bootstrap-t interval for the mean: resample, t* = (mean* - mean) / se*,
/// interval = [mean - t*_{1-a/2} se, mean - t*_{a/2} se]. Resamples whose
/// standard error is zero are skipped.
Interval bootstrap_ci(std::span<const double> samples, Rng& rng, std::size_t resamples = 10000, double level = 0.95);

struct PairedTest {
  double mean_diff = 0.0;
  double t = 0.0;
  double p_value = 1.0;  // one-sided, H1: mean(a - b) > 0
  std::size_t n = 0;
};

/// Paired one-sided t-test of a > b.
PairedTest paired_t_test(std::span<const double> a, std::span<const double> b);

}  // namespace pathforge
