#include "pathforge/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

namespace pathforge {

double sample_mean(std::span<const double> x) {
  if (x.empty()) throw UsageError("mean of an empty sample");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_sd(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = sample_mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw UsageError("quantile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  if (i + 1 >= sorted.size()) return sorted.back();
  const double frac = pos - static_cast<double>(i);
  return sorted[i] + frac * (sorted[i + 1] - sorted[i]);
}

Interval bootstrap_ci(std::span<const double> samples, Rng& rng, std::size_t resamples, double level) {
  if (!(level > 0.0 && level < 1.0)) throw UsageError("confidence level must lie in (0,1)");
  if (samples.empty()) throw UsageError("bootstrap of an empty sample");
  const double m = sample_mean(samples);
  const std::size_t n = samples.size();
  const double se = sample_sd(samples) / std::sqrt(static_cast<double>(n));
  if (n < 2 || !(se > 0.0)) return {m, m, m, true};

  std::vector<double> t;
  t.reserve(resamples);
  std::vector<double> draw(n);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  for (std::size_t r = 0; r < resamples; ++r) {
    for (auto& d : draw) d = samples[pick(rng)];
    const double se_star = sample_sd(draw) / std::sqrt(static_cast<double>(n));
    if (!(se_star > 0.0)) continue;
    t.push_back((sample_mean(draw) - m) / se_star);
  }
  if (t.empty()) return {m, m, m, true};
  std::sort(t.begin(), t.end());
  const double alpha = 1.0 - level;
  return {m, m - quantile_sorted(t, 1.0 - alpha / 2.0) * se, m - quantile_sorted(t, alpha / 2.0) * se, false};
}

PairedTest paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw UsageError("paired test needs samples of equal size");
  if (a.size() < 2) throw UsageError("paired test needs at least 2 pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  PairedTest res;
  res.n = d.size();
  res.mean_diff = sample_mean(d);
  const double se = sample_sd(d) / std::sqrt(static_cast<double>(d.size()));
  if (!(se > 0.0)) {
    res.t = res.mean_diff > 0.0 ? INFINITY : (res.mean_diff < 0.0 ? -INFINITY : 0.0);
    res.p_value = res.mean_diff > 0.0 ? 0.0 : 1.0;
    return res;
  }
  res.t = res.mean_diff / se;
  boost::math::students_t dist(static_cast<double>(d.size() - 1));
  res.p_value = boost::math::cdf(boost::math::complement(dist, res.t));
  return res;
}

}  // namespace pathforge
