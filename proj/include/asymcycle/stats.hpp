#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace asymcycle {

struct WilcoxonResult {
  double statistic = 0.0;       // W+ = sum of ranks of positive differences
  double p_two_sided = 1.0;
  double p_one_sided_greater = 1.0;  // H1: a > b
  int n_effective = 0;          // pairs after zero-difference removal
  bool degenerate = false;      // all differences were zero
  bool exact = true;            // exact null distribution vs normal approx
};

namespace detail {

inline double std_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// Average ranks of |d|, doubled so that tied ranks stay integral.
inline std::vector<std::int64_t> double_ranks(const std::vector<double>& absd) {
  const int n = static_cast<int>(absd.size());
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) { return absd[a] < absd[b]; });
  std::vector<std::int64_t> dr(n, 0);
  int i = 0;
  while (i < n) {
    int j = i;
    while (j + 1 < n && absd[order[j + 1]] == absd[order[i]]) ++j;
    // ranks i+1 .. j+1 tie; doubled average = (i+1) + (j+1)
    const std::int64_t doubled = static_cast<std::int64_t>(i + 1) + (j + 1);
    for (int k = i; k <= j; ++k) dr[order[k]] = doubled;
    i = j + 1;
  }
  return dr;
}

}  // namespace detail

/// Two-sided and one-sided paired Wilcoxon signed-rank test. Zero differences
/// are dropped before ranking, tied magnitudes receive average ranks. For
/// n <= exact_threshold the null distribution of W+ is computed exactly over
/// all 2^n sign assignments (via subset-sum counting); beyond that a normal
/// approximation with tie correction and continuity correction is used.
///
/// Two-sided p is 2 * min(P(W+ <= w), P(W+ >= w)), capped at 1, which is the
/// doubled-tail convention of the exact test.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b,
                                           int exact_threshold = 20) {
  if (a.size() != b.size()) throw std::invalid_argument("wilcoxon: unequal sample lengths");
  if (a.empty()) throw std::invalid_argument("wilcoxon: empty samples");

  std::vector<double> diffs;
  diffs.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d != 0.0) diffs.push_back(d);
  }

  WilcoxonResult res;
  res.n_effective = static_cast<int>(diffs.size());
  if (diffs.empty()) {
    res.degenerate = true;
    return res;
  }

  std::vector<double> absd(diffs.size());
  for (std::size_t i = 0; i < diffs.size(); ++i) absd[i] = std::abs(diffs[i]);
  const auto dr = detail::double_ranks(absd);

  std::int64_t w_plus2 = 0;   // doubled W+
  std::int64_t total2 = 0;    // doubled rank sum = n(n+1)
  for (std::size_t i = 0; i < diffs.size(); ++i) {
    total2 += dr[i];
    if (diffs[i] > 0.0) w_plus2 += dr[i];
  }
  res.statistic = static_cast<double>(w_plus2) / 2.0;
  const int n = res.n_effective;

  if (n <= exact_threshold) {
    // counts[s] = number of sign assignments with doubled rank-sum s
    std::vector<std::uint64_t> counts(static_cast<std::size_t>(total2) + 1, 0);
    counts[0] = 1;
    for (std::size_t i = 0; i < diffs.size(); ++i) {
      const std::int64_t r = dr[i];
      for (std::int64_t s = total2; s >= r; --s)
        if (counts[s - r]) counts[s] += counts[s - r];
    }
    std::uint64_t le = 0, ge = 0, all = 0;
    for (std::int64_t s = 0; s <= total2; ++s) {
      all += counts[s];
      if (s <= w_plus2) le += counts[s];
      if (s >= w_plus2) ge += counts[s];
    }
    const double p_le = static_cast<double>(le) / static_cast<double>(all);
    const double p_ge = static_cast<double>(ge) / static_cast<double>(all);
    res.p_one_sided_greater = p_ge;
    res.p_two_sided = std::min(1.0, 2.0 * std::min(p_le, p_ge));
    res.exact = true;
  } else {
    const double w = res.statistic;
    const double mean = n * (n + 1) / 4.0;
    double tie_term = 0.0;
    {
      std::vector<std::int64_t> sorted = dr;
      std::sort(sorted.begin(), sorted.end());
      std::size_t i = 0;
      while (i < sorted.size()) {
        std::size_t j = i;
        while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
        const double t = static_cast<double>(j - i + 1);
        tie_term += t * t * t - t;
        i = j + 1;
      }
    }
    const double var = n * (n + 1) * (2.0 * n + 1) / 24.0 - tie_term / 48.0;
    const double sd = std::sqrt(var);
    const double z_ge = (w - mean - 0.5) / sd;  // continuity-corrected upper tail
    const double z_le = (w - mean + 0.5) / sd;
    const double p_ge = 1.0 - detail::std_normal_cdf(z_ge);
    const double p_le = detail::std_normal_cdf(z_le);
    res.p_one_sided_greater = p_ge;
    res.p_two_sided = std::min(1.0, 2.0 * std::min(p_le, p_ge));
    res.exact = false;
  }
  return res;
}

/// Spearman rank correlation with average ranks, used for the fat-fraction
/// marker diagnostics.
inline double spearman_rank_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::invalid_argument("spearman: need equal-length samples, n >= 2");
  auto ranks = [](std::span<const double> v) {
    std::vector<double> copy(v.begin(), v.end());
    const auto dr = detail::double_ranks(copy);
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) r[i] = dr[i] / 2.0;
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= ra.size();
  mb /= rb.size();
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

}  // namespace asymcycle
