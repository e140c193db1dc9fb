#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtlforge/error.hpp"
#include "mtlforge/stats/distributions.hpp"
#include "mtlforge/stats/metrics.hpp"

namespace mtl::stats {

inline constexpr double kSignificanceLevel = 0.01;
inline constexpr std::size_t kWilcoxonMinPairs = 6;
inline constexpr std::size_t kWilcoxonExactMax = 20;

struct SignificanceResult {
  std::string test;  // "wilcoxon" or "t_test"
  double statistic = 0.0;
  double p_value = 1.0;
  bool significant = false;
  std::optional<double> normality_p;
  bool normality_fallback = false;  // Shapiro-Wilk rejected, Wilcoxon used instead of t
  std::size_t pairs = 0;            // K entering the test (after zero removal for Wilcoxon)
};

inline SignificanceResult make_result(std::string test, double stat, double p, std::size_t pairs) {
  p = std::clamp(p, 0.0, 1.0);
  return SignificanceResult{std::move(test), stat, p, p < kSignificanceLevel, std::nullopt, false, pairs};
}

inline std::vector<double> paired_differences(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "paired test: sample sizes differ (" + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()) + ")");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return d;
}

/// Ranks of |d| (1-based) with ties mid-ranked, doubled so they stay integral.
inline std::vector<long> doubled_abs_ranks(std::span<const double> d) {
  const std::size_t n = d.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return std::abs(d[x]) < std::abs(d[y]); });
  std::vector<long> r2(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const long sum = static_cast<long>(i + 1 + j + 1);  // 2 * mid-rank
    for (std::size_t k = i; k <= j; ++k) r2[order[k]] = sum;
    i = j + 1;
  }
  return r2;
}

namespace detail {

// Number of sign assignments whose doubled positive-rank sum is <= limit.
inline double exact_lower_count(const std::vector<long>& r2, long limit) {
  long total = 0;
  for (long r : r2) total += r;
  std::vector<double> ways(static_cast<std::size_t>(total) + 1, 0.0);
  ways[0] = 1.0;
  long reach = 0;
  for (long r : r2) {
    reach += r;
    for (long s = reach; s >= r; --s) ways[static_cast<std::size_t>(s)] += ways[static_cast<std::size_t>(s - r)];
  }
  double c = 0.0;
  for (long s = 0; s <= std::min(limit, total); ++s) c += ways[static_cast<std::size_t>(s)];
  return c;
}

}  // namespace detail

/// Two-sided Wilcoxon signed-rank test on a - b. Statistic is min(W+, W-).
inline SignificanceResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  const auto all = paired_differences(a, b);
  std::vector<double> d;
  for (double v : all) {
    if (!std::isfinite(v)) throw NumericError("wilcoxon: non-finite difference");
    if (v != 0.0) d.push_back(v);
  }
  if (d.empty()) throw DataError("wilcoxon: all differences are zero");
  if (d.size() < kWilcoxonMinPairs)
    throw UsageError("wilcoxon: need at least " + std::to_string(kWilcoxonMinPairs) +
                     " nonzero differences, got " + std::to_string(d.size()));
  const std::size_t k = d.size();
  const auto r2 = doubled_abs_ranks(d);
  long w_plus2 = 0, total2 = 0;
  for (std::size_t i = 0; i < k; ++i) {
    total2 += r2[i];
    if (d[i] > 0) w_plus2 += r2[i];
  }
  const long w_min2 = std::min(w_plus2, total2 - w_plus2);
  const double stat = static_cast<double>(w_min2) / 2.0;
  double p;
  if (k <= kWilcoxonExactMax) {
    p = 2.0 * detail::exact_lower_count(r2, w_min2) / std::ldexp(1.0, static_cast<int>(k));
  } else {
    const double n = static_cast<double>(k);
    const double mean = n * (n + 1.0) / 4.0;
    double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
    // tie correction: sum over tie groups of (t^3 - t) / 48
    std::vector<long> sorted = r2;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < k;) {
      std::size_t j = i;
      while (j < k && sorted[j] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i);
      var -= (t * t * t - t) / 48.0;
      i = j;
    }
    const double dev = std::abs(static_cast<double>(w_plus2) / 2.0 - mean) - 0.5;
    p = dev <= 0.0 ? 1.0 : 2.0 * normal_sf(dev / std::sqrt(var));
  }
  return make_result("wilcoxon", stat, p, k);
}

struct ShapiroWilkResult {
  double w = 1.0;
  double p_value = 1.0;
};

namespace detail {

inline double poly(std::initializer_list<double> c, double x) {
  double r = 0.0, pw = 1.0;
  for (double v : c) {
    r += v * pw;
    pw *= x;
  }
  return r;
}

}  // namespace detail

/// Shapiro-Wilk W with Royston's (1995) coefficient and p-value approximations.
inline ShapiroWilkResult shapiro_wilk(std::span<const double> sample) {
  const std::size_t n = sample.size();
  require(n >= 3 && n <= 5000, "shapiro_wilk: sample size must be in [3, 5000], got " + std::to_string(n));
  std::vector<double> x(sample.begin(), sample.end());
  for (double v : x)
    if (!std::isfinite(v)) throw NumericError("shapiro_wilk: non-finite value");
  std::sort(x.begin(), x.end());
  if (x.back() - x.front() == 0.0) throw DataError("shapiro_wilk: zero variance");

  const double nn = static_cast<double>(n);
  std::vector<double> a(n, 0.0);
  if (n == 3) {
    a[0] = -std::sqrt(0.5);
    a[2] = std::sqrt(0.5);
  } else {
    std::vector<double> m(n);
    double summ2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = normal_quantile((static_cast<double>(i + 1) - 0.375) / (nn + 0.25));
      summ2 += m[i] * m[i];
    }
    const double ssumm2 = std::sqrt(summ2);
    const double u = 1.0 / std::sqrt(nn);
    const double an = m[n - 1] / ssumm2 + detail::poly({0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056}, u);
    a[n - 1] = an;
    a[0] = -an;
    if (n > 5) {
      const double an1 =
          m[n - 2] / ssumm2 + detail::poly({0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633}, u);
      a[n - 2] = an1;
      a[1] = -an1;
      const double phi = (summ2 - 2.0 * m[n - 1] * m[n - 1] - 2.0 * m[n - 2] * m[n - 2]) /
                         (1.0 - 2.0 * an * an - 2.0 * an1 * an1);
      for (std::size_t i = 2; i + 2 < n; ++i) a[i] = m[i] / std::sqrt(phi);
    } else {
      const double phi = (summ2 - 2.0 * m[n - 1] * m[n - 1]) / (1.0 - 2.0 * an * an);
      for (std::size_t i = 1; i + 1 < n; ++i) a[i] = m[i] / std::sqrt(phi);
    }
  }

  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= nn;
  double ssq = 0.0, lin = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ssq += (x[i] - mean) * (x[i] - mean);
    lin += a[i] * (x[i] - mean);
  }
  double w = std::min(1.0, lin * lin / ssq);

  double p;
  if (n == 3) {
    constexpr double six_over_pi = 6.0 / std::numbers::pi;
    p = std::max(0.0, six_over_pi * (std::asin(std::sqrt(w)) - std::asin(std::sqrt(0.75))));
  } else {
    const double w1 = std::log1p(-w);
    double z;
    if (n <= 11) {
      const double gamma = detail::poly({-2.273, 0.459}, nn);
      if (w1 >= gamma) return {w, 1e-99};  // log transform undefined, far tail
      const double mu = detail::poly({0.5440, -0.39978, 0.025054, -6.714e-4}, nn);
      const double sigma = std::exp(detail::poly({1.3822, -0.77857, 0.062767, -0.0020322}, nn));
      z = (-std::log(gamma - w1) - mu) / sigma;
    } else {
      const double ln = std::log(nn);
      const double mu = detail::poly({-1.5861, -0.31082, -0.083751, 0.0038915}, ln);
      const double sigma = std::exp(detail::poly({-0.4803, -0.082676, 0.0030302}, ln));
      z = (w1 - mu) / sigma;
    }
    p = normal_sf(z);
  }
  return {w, std::clamp(p, 0.0, 1.0)};
}

/// Two-sided paired t-test on a - b with K-1 degrees of freedom.
inline SignificanceResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  const auto d = paired_differences(a, b);
  require(d.size() >= 2, "t-test: need at least two pairs");
  const double n = static_cast<double>(d.size());
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  if (!std::isfinite(ss)) throw NumericError("t-test: non-finite differences");
  if (ss == 0.0) throw DataError("t-test: differences have zero variance");
  const double sd = std::sqrt(ss / (n - 1.0));
  const double t = mean / (sd / std::sqrt(n));
  return make_result("t_test", t, student_t_two_sided(t, n - 1.0), d.size());
}

/// Test choice: K > 20 -> Wilcoxon; otherwise Shapiro-Wilk on the differences,
/// then the t-test if normality holds at 0.01, Wilcoxon (flagged) if not.
inline SignificanceResult select_and_run(const ModelScores& model, const ModelScores& baseline) {
  const std::size_t k = model.rmse.size();
  require(k == baseline.rmse.size(), "significance: task counts differ between " + model.model + " and " +
                                         baseline.model);
  require(k >= kWilcoxonMinPairs, "significance: need at least " + std::to_string(kWilcoxonMinPairs) +
                                      " tasks, got " + std::to_string(k));
  if (k > kWilcoxonExactMax) return wilcoxon_signed_rank(model.rmse, baseline.rmse);
  const auto d = paired_differences(model.rmse, baseline.rmse);
  const auto sw = shapiro_wilk(d);
  SignificanceResult r;
  if (sw.p_value < kSignificanceLevel) {
    r = wilcoxon_signed_rank(model.rmse, baseline.rmse);
    r.normality_fallback = true;
  } else {
    r = paired_t_test(model.rmse, baseline.rmse);
  }
  r.normality_p = sw.p_value;
  return r;
}

}  // namespace mtl::stats
