#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "asymcycle/tensor.hpp"

namespace asymcycle {

/// Dice similarity coefficient 2|A∩B| / (|A|+|B|); 1.0 when both masks are
/// empty.
template <typename T>
double dsc(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "dsc");
  std::size_t na = 0, nb = 0, inter = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool ia = a[i] != T(0), ib = b[i] != T(0);
    na += ia;
    nb += ib;
    inter += (ia && ib);
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

/// Pixels with t_low <= intensity <= t_high.
inline Mask segment_by_thresholds(const Image& img, double t_low, double t_high) {
  Mask m(img.n(), img.c(), img.h(), img.w());
  for (std::size_t i = 0; i < img.size(); ++i)
    m[i] = (img[i] >= t_low && img[i] <= t_high) ? 1 : 0;
  return m;
}

struct ThresholdResult {
  double t_low = 0.0;
  double t_high = 0.0;
  double dsc = 0.0;
};

/// Exhaustive search for the DSC-optimal pair of thresholds over the
/// quantized grid {i/(levels-1)}. Exact: every pixel is bucketed by the
/// smallest/largest grid value selecting it, and the DSC of every (t_low,
/// t_high) pair is evaluated from 2-D cumulative counts. Ties break toward
/// the smallest t_low, then smallest t_high.
inline ThresholdResult optimal_two_threshold(const Image& img, const Mask& gt, int levels = 256) {
  if (img.shape() != gt.shape())
    throw std::invalid_argument("optimal_two_threshold: image/mask shape mismatch");
  if (levels < 2) throw std::invalid_argument("optimal_two_threshold: levels must be >= 2");
  if (img.size() == 0) throw std::invalid_argument("optimal_two_threshold: empty image");

  const int L = levels;
  std::vector<double> grid(L);
  for (int i = 0; i < L; ++i) grid[i] = static_cast<double>(i) / (L - 1);

  // For pixel p: selected by (i, j) iff grid[i] <= p && p <= grid[j],
  // i.e. i <= a(p) and j >= b(p) with a/b found against the same grid values
  // the brute force compares with.
  auto last_leq = [&](double p) {
    int lo = -1, hi = L - 1;
    while (lo < hi) {
      const int mid = (lo + hi + 1) / 2;
      if (grid[mid] <= p)
        lo = mid;
      else
        hi = mid - 1;
    }
    return lo;  // -1 if no grid value <= p (cannot happen for p >= 0)
  };
  auto first_geq = [&](double p) {
    int lo = 0, hi = L;
    while (lo < hi) {
      const int mid = (lo + hi) / 2;
      if (grid[mid] >= p)
        hi = mid;
      else
        lo = mid + 1;
    }
    return lo;  // L if no grid value >= p (cannot happen for p <= 1)
  };

  std::vector<std::int64_t> all(static_cast<std::size_t>(L) * L, 0);
  std::vector<std::int64_t> pos(static_cast<std::size_t>(L) * L, 0);
  std::int64_t gt_count = 0;
  for (std::size_t p = 0; p < img.size(); ++p) {
    if (gt[p]) ++gt_count;
    const double v = img[p];
    const int a = last_leq(v);
    const int b = first_geq(v);
    if (a < 0 || b >= L) continue;  // out-of-grid pixel can never be selected
    all[static_cast<std::size_t>(a) * L + b] += 1;
    if (gt[p]) pos[static_cast<std::size_t>(a) * L + b] += 1;
  }

  // cum[i][j] = number of pixels with a >= i and b <= j
  auto accumulate = [&](std::vector<std::int64_t>& m) {
    for (int i = 0; i < L; ++i)  // prefix along j
      for (int j = 1; j < L; ++j) m[static_cast<std::size_t>(i) * L + j] += m[static_cast<std::size_t>(i) * L + j - 1];
    for (int i = L - 2; i >= 0; --i)  // suffix along i
      for (int j = 0; j < L; ++j) m[static_cast<std::size_t>(i) * L + j] += m[static_cast<std::size_t>(i + 1) * L + j];
  };
  accumulate(all);
  accumulate(pos);

  ThresholdResult best;
  best.dsc = -1.0;
  for (int i = 0; i < L; ++i)
    for (int j = i; j < L; ++j) {
      const std::int64_t sel = all[static_cast<std::size_t>(i) * L + j];
      const std::int64_t hit = pos[static_cast<std::size_t>(i) * L + j];
      const double d = (sel + gt_count) == 0 ? 1.0
                                             : 2.0 * static_cast<double>(hit) /
                                                   static_cast<double>(sel + gt_count);
      if (d > best.dsc) {
        best.dsc = d;
        best.t_low = grid[i];
        best.t_high = grid[j];
      }
    }
  return best;
}

/// Intensity mass removed by translation: mean over the whole image of
/// max(x - fx, 0). Ground-truth independent.
inline double fat_fraction_marker(const Image& x, const Image& fx) {
  require_same_shape(x, fx, "fat_fraction_marker");
  if (x.size() == 0) throw std::invalid_argument("fat_fraction_marker: empty image");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += std::max(0.0, static_cast<double>(x[i]) - fx[i]);
  return acc / static_cast<double>(x.size());
}

}  // namespace asymcycle
