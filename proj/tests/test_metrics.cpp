#include <catch2/catch_amalgamated.hpp>

#include "asymcycle/metrics.hpp"
#include "asymcycle/rng.hpp"

using namespace asymcycle;

namespace {

/// Brute-force oracle: tries every quantized threshold pair directly on the
/// pixel values.
ThresholdResult threshold_oracle(const Image& img, const Mask& gt, int levels) {
  std::vector<double> grid(levels);
  for (int i = 0; i < levels; ++i) grid[i] = double(i) / (levels - 1);
  std::size_t gt_count = 0;
  for (std::size_t p = 0; p < gt.size(); ++p) gt_count += gt[p] != 0;

  ThresholdResult best;
  best.dsc = -1.0;
  for (int i = 0; i < levels; ++i)
    for (int j = i; j < levels; ++j) {
      std::size_t sel = 0, hit = 0;
      for (std::size_t p = 0; p < img.size(); ++p) {
        if (grid[i] <= img[p] && img[p] <= grid[j]) {
          ++sel;
          if (gt[p]) ++hit;
        }
      }
      const double d = (sel + gt_count) == 0 ? 1.0 : 2.0 * double(hit) / double(sel + gt_count);
      if (d > best.dsc) best = {grid[i], grid[j], d};
    }
  return best;
}

Mask mask_from(std::initializer_list<int> bits, int h, int w) {
  Mask m(1, 1, h, w);
  int i = 0;
  for (int b : bits) m[i++] = static_cast<std::uint8_t>(b);
  return m;
}

}  // namespace

TEST_CASE("dsc basics") {
  const auto a = mask_from({1, 1, 0, 0}, 2, 2);
  const auto b = mask_from({1, 1, 0, 0}, 2, 2);
  CHECK(dsc(a, b) == 1.0);

  const auto c = mask_from({0, 0, 1, 1}, 2, 2);
  CHECK(dsc(a, c) == 0.0);

  // |A| = 4, |B| = 4, overlap 2 -> 0.5
  const auto big_a = mask_from({1, 1, 1, 1, 0, 0, 0, 0, 0}, 3, 3);
  const auto big_b = mask_from({1, 1, 0, 0, 1, 1, 0, 0, 0}, 3, 3);
  CHECK(dsc(big_a, big_b) == 0.5);

  const auto empty = mask_from({0, 0, 0, 0}, 2, 2);
  CHECK(dsc(empty, empty) == 1.0);
  CHECK(dsc(a, empty) == 0.0);

  Mask other(1, 1, 4, 1);
  CHECK_THROWS_AS(dsc(a, other), std::invalid_argument);

  // symmetry on random masks
  Rng rng(5);
  Mask ra(1, 1, 6, 6), rb(1, 1, 6, 6);
  for (std::size_t i = 0; i < ra.size(); ++i) {
    ra[i] = rng.bernoulli(0.4);
    rb[i] = rng.bernoulli(0.4);
  }
  CHECK(dsc(ra, rb) == dsc(rb, ra));
  CHECK(dsc(ra, rb) >= 0.0);
  CHECK(dsc(ra, rb) <= 1.0);
}

TEST_CASE("optimal_two_threshold: three-level toy image is solved exactly") {
  // 0 background, 0.5 muscle, 1.0 fat; gt = the muscle pixels
  Image img(1, 1, 3, 3);
  Mask gt(1, 1, 3, 3);
  const float values[9] = {0.f, 0.5f, 1.f, 0.5f, 0.5f, 0.f, 1.f, 0.f, 0.5f};
  for (int i = 0; i < 9; ++i) {
    img[i] = values[i];
    gt[i] = values[i] == 0.5f;
  }
  const auto r = optimal_two_threshold(img, gt, 3);  // grid {0, 0.5, 1}
  CHECK(r.t_low == 0.5);
  CHECK(r.t_high == 0.5);
  CHECK(r.dsc == 1.0);
}

TEST_CASE("optimal_two_threshold: full mask over the full intensity range") {
  Image img(1, 1, 2, 2);
  img[0] = 0.f;
  img[1] = 0.3f;
  img[2] = 0.7f;
  img[3] = 1.f;
  Mask gt(1, 1, 2, 2);
  gt.fill(1);
  const auto r = optimal_two_threshold(img, gt, 8);
  CHECK(r.t_low == 0.0);
  CHECK(r.t_high == 1.0);
  CHECK(r.dsc == 1.0);
}

TEST_CASE("optimal_two_threshold matches brute force on random images") {
  Rng rng(99);
  for (int trial = 0; trial < 60; ++trial) {
    const int size = static_cast<int>(rng.uniform_int(3, 12));
    const int levels = static_cast<int>(rng.uniform_int(2, 8));
    Image img(1, 1, size, size);
    Mask gt(1, 1, size, size);
    for (std::size_t i = 0; i < img.size(); ++i) {
      // mix of exact grid values and arbitrary reals exercises boundary ties
      img[i] = rng.bernoulli(0.5)
                   ? float(rng.uniform_int(0, levels - 1)) / (levels - 1)
                   : float(rng.uniform());
      gt[i] = rng.bernoulli(0.4);
    }
    const auto fast = optimal_two_threshold(img, gt, levels);
    const auto slow = threshold_oracle(img, gt, levels);
    CHECK(fast.dsc == slow.dsc);
    CHECK(fast.t_low == slow.t_low);
    CHECK(fast.t_high == slow.t_high);
  }
}

TEST_CASE("optimal_two_threshold input validation") {
  Image img(1, 1, 2, 2);
  Mask gt(1, 1, 2, 2);
  CHECK_THROWS_AS(optimal_two_threshold(img, gt, 1), std::invalid_argument);
  Image empty;
  Mask empty_mask;
  CHECK_THROWS_AS(optimal_two_threshold(empty, empty_mask, 8), std::invalid_argument);
  Mask wrong(1, 1, 4, 1);
  CHECK_THROWS_AS(optimal_two_threshold(img, wrong, 8), std::invalid_argument);
}

TEST_CASE("segment_by_thresholds is consistent with the reported dsc") {
  Rng rng(123);
  Image img(1, 1, 10, 10);
  Mask gt(1, 1, 10, 10);
  for (std::size_t i = 0; i < img.size(); ++i) {
    img[i] = float(rng.uniform());
    gt[i] = rng.bernoulli(0.5);
  }
  const auto r = optimal_two_threshold(img, gt, 16);
  const auto seg = segment_by_thresholds(img, r.t_low, r.t_high);
  CHECK(dsc(seg, gt) == r.dsc);
  CHECK(r.t_low <= r.t_high);
}

TEST_CASE("fat_fraction_marker hand-computed example") {
  // 10% of the area drops from 0.9 to 0.45 -> mean removed mass 0.1 * 0.45
  const int S = 10;  // 100 pixels; 10 pixels form the blob
  Image x(1, 1, S, S), fx(1, 1, S, S);
  x.fill(0.2f);
  fx = x;
  for (int i = 0; i < 10; ++i) {
    x[i] = 0.9f;
    fx[i] = 0.45f;
  }
  CHECK(fat_fraction_marker(x, fx) == Catch::Approx(0.045).epsilon(1e-6));
  CHECK(fat_fraction_marker(x, x) == 0.0);

  // translation that only raises intensities contributes nothing
  Image brighter = x;
  for (std::size_t i = 0; i < brighter.size(); ++i) brighter[i] += 0.05f;
  CHECK(fat_fraction_marker(x, brighter) == 0.0);

  Image wrong(1, 1, 2, 2);
  CHECK_THROWS_AS(fat_fraction_marker(x, wrong), std::invalid_argument);
}
