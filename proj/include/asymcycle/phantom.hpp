#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "asymcycle/rng.hpp"
#include "asymcycle/tensor.hpp"

namespace asymcycle {

enum class Severity { HEALTHY, MODERATE, SEVERE };
enum class Domain { HEALTHY, PATHOLOGICAL };

inline const char* to_string(Severity s) {
  switch (s) {
    case Severity::HEALTHY: return "healthy";
    case Severity::MODERATE: return "moderate";
    default: return "severe";
  }
}
inline const char* to_string(Domain d) {
  return d == Domain::HEALTHY ? "healthy" : "pathological";
}

inline Severity severity_from_string(const std::string& s) {
  if (s == "healthy") return Severity::HEALTHY;
  if (s == "moderate") return Severity::MODERATE;
  if (s == "severe") return Severity::SEVERE;
  throw std::invalid_argument("unknown severity: " + s);
}
inline Domain domain_from_string(const std::string& s) {
  if (s == "healthy") return Domain::HEALTHY;
  if (s == "pathological") return Domain::PATHOLOGICAL;
  throw std::invalid_argument("unknown domain: " + s);
}

/// One 2-D slice of the synthetic cohort. Pathological slices keep a link to
/// the healthy anatomy they were derived from; that twin is written to disk
/// for diagnostics and evaluation oracles but is never handed to training.
struct Slice {
  std::string id;
  std::string patient_id;
  int slice_index = 0;
  Domain domain = Domain::HEALTHY;
  Severity severity = Severity::HEALTHY;
  Image pixels;
  Mask gt_mask;             // muscle compartment including infiltration
  Mask infiltration_mask;   // empty for healthy slices
  std::string healthy_twin_id;  // set on pathological slices
  bool oracle_twin = false;     // true for stored twins of pathological slices
};

struct PatientInfo {
  std::string id;
  Severity severity = Severity::HEALTHY;
};

struct IntRange {
  int lo = 0, hi = 0;
};
struct RealRange {
  double lo = 0.0, hi = 0.0;
};

struct TissueIntensities {
  double background = 0.05;
  double bone = 0.15;
  double muscle = 0.45;
  double subcutaneous_fat = 0.90;
  double infiltration = 0.88;  // deliberately close to subcutaneous fat
};

struct CohortConfig {
  int image_size = 64;
  int n_healthy_patients = 21;
  int n_moderate_patients = 7;
  int n_severe_patients = 13;
  int slices_per_patient = 10;
  IntRange moderate_blob_count{1, 3};
  IntRange severe_blob_count{2, 5};
  RealRange moderate_area_fraction{0.05, 0.12};
  RealRange severe_area_fraction{0.15, 0.30};
  TissueIntensities intensities;
  double blur_sigma = 1.0;
  double noise_std = 0.02;
  std::uint64_t seed = 1;

  void validate() const {
    if (image_size < 32) throw std::invalid_argument("image_size must be >= 32");
    if (n_healthy_patients < 0 || n_moderate_patients < 0 || n_severe_patients < 0 ||
        slices_per_patient < 1)
      throw std::invalid_argument("invalid cohort counts");
    const double in[5] = {intensities.background, intensities.bone, intensities.muscle,
                          intensities.subcutaneous_fat, intensities.infiltration};
    for (double v : in)
      if (v < 0.0 || v > 1.0) throw std::invalid_argument("tissue intensity outside [0,1]");
    // Infiltration is exempt from the separation rule against subcutaneous
    // fat: the two are meant to overlap so that plain thresholding fails on
    // pathological slices. All other pairs must be noise-separable.
    const double sep = 3.0 * noise_std;
    const char* names[5] = {"background", "bone", "muscle", "subcutaneous_fat", "infiltration"};
    for (int i = 0; i < 5; ++i)
      for (int j = i + 1; j < 5; ++j) {
        if ((i == 3 && j == 4) || (i == 4 && j == 3)) continue;
        if (std::abs(in[i] - in[j]) < sep)
          throw std::invalid_argument(std::string("tissue intensities '") + names[i] + "' and '" +
                                      names[j] + "' closer than 3*noise_std");
      }
    auto check_range = [](const RealRange& r, const char* what) {
      if (r.lo < 0.0 || r.hi < r.lo || r.hi > 0.9)
        throw std::invalid_argument(std::string("bad area fraction range: ") + what);
    };
    check_range(moderate_area_fraction, "moderate");
    check_range(severe_area_fraction, "severe");
    if (n_moderate_patients > 0 && n_severe_patients > 0 &&
        severe_area_fraction.lo <= moderate_area_fraction.hi)
      throw std::invalid_argument("severe blob-area range must lie strictly above moderate range");
    auto check_count = [](const IntRange& r, const char* what) {
      if (r.lo < 0 || r.hi < r.lo)
        throw std::invalid_argument(std::string("bad blob count range: ") + what);
    };
    check_count(moderate_blob_count, "moderate");
    check_count(severe_blob_count, "severe");
    if (blur_sigma < 0.0 || noise_std < 0.0)
      throw std::invalid_argument("blur_sigma/noise_std must be non-negative");
  }
};

struct FoldPlan {
  int k = 0;
  std::map<std::string, int> assignment;  // patient id -> fold in [0, k)
};

// ---------------------------------------------------------------------------
// Augmentation: exact grid permutations of a square image, no interpolation.
// ---------------------------------------------------------------------------

enum class AugmentOp { IDENTITY, ROT90, ROT180, ROT270, FLIP_H, FLIP_V };

inline const char* to_string(AugmentOp op) {
  switch (op) {
    case AugmentOp::IDENTITY: return "identity";
    case AugmentOp::ROT90: return "rot90";
    case AugmentOp::ROT180: return "rot180";
    case AugmentOp::ROT270: return "rot270";
    case AugmentOp::FLIP_H: return "flip_h";
    default: return "flip_v";
  }
}

template <typename T>
Tensor<T> augment(const Tensor<T>& img, AugmentOp op) {
  const int h = img.h(), w = img.w();
  if (h != w) throw std::invalid_argument("augment: image must be square");
  Tensor<T> out(img.n(), img.c(), h, w);
  for (int n = 0; n < img.n(); ++n)
    for (int c = 0; c < img.c(); ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          T v;
          switch (op) {
            case AugmentOp::IDENTITY: v = img.at(n, c, y, x); break;
            case AugmentOp::ROT90: v = img.at(n, c, h - 1 - x, y); break;       // clockwise
            case AugmentOp::ROT180: v = img.at(n, c, h - 1 - y, w - 1 - x); break;
            case AugmentOp::ROT270: v = img.at(n, c, x, w - 1 - y); break;
            case AugmentOp::FLIP_H: v = img.at(n, c, y, w - 1 - x); break;
            default: v = img.at(n, c, h - 1 - y, x); break;                     // FLIP_V
          }
          out.at(n, c, y, x) = v;
        }
  return out;
}

/// Applies the same grid permutation to pixels and both masks.
inline Slice augment_slice(const Slice& s, AugmentOp op) {
  Slice out = s;
  out.pixels = augment(s.pixels, op);
  out.gt_mask = augment(s.gt_mask, op);
  out.infiltration_mask = augment(s.infiltration_mask, op);
  return out;
}

// ---------------------------------------------------------------------------
// Phantom anatomy
// ---------------------------------------------------------------------------

namespace detail {

inline double sq(double v) { return v * v; }

struct Modulator {
  double amplitude = 0.0;
  double freq = 1.0;
  double phase = 0.0;
  double eval(double t) const { return amplitude * std::sin(6.283185307179586 * freq * t + phase); }
};

inline Modulator draw_modulator(Rng& rng, double amp_lo, double amp_hi) {
  Modulator m;
  m.amplitude = rng.uniform(amp_lo, amp_hi);
  m.freq = static_cast<double>(rng.uniform_int(1, 2));
  m.phase = rng.uniform(0.0, 6.283185307179586);
  return m;
}

/// Per-patient base anatomy in relative units plus smooth per-slice modulators,
/// so consecutive slices of one patient stay strongly correlated.
struct PatientAnatomy {
  double cx, cy;          // thigh center
  double rx, ry;          // thigh outer radii
  double fat_thickness;   // subcutaneous fat ring
  double bone_r;
  double bone_dx, bone_dy;
  Modulator m_cx, m_cy, m_rx, m_ry;
};

inline PatientAnatomy draw_anatomy(Rng& rng) {
  PatientAnatomy a;
  a.cx = 0.5 + rng.uniform(-0.03, 0.03);
  a.cy = 0.5 + rng.uniform(-0.03, 0.03);
  a.rx = rng.uniform(0.34, 0.40);
  a.ry = rng.uniform(0.34, 0.40);
  a.fat_thickness = rng.uniform(0.06, 0.09);
  a.bone_r = rng.uniform(0.07, 0.10);
  a.bone_dx = rng.uniform(-0.05, 0.05);
  a.bone_dy = rng.uniform(-0.05, 0.05);
  a.m_cx = draw_modulator(rng, 0.002, 0.01);
  a.m_cy = draw_modulator(rng, 0.002, 0.01);
  a.m_rx = draw_modulator(rng, 0.005, 0.02);
  a.m_ry = draw_modulator(rng, 0.005, 0.02);
  return a;
}

inline void gaussian_blur_inplace(Image& img, double sigma) {
  if (sigma <= 0.0) return;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<float> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    kernel[i + radius] = static_cast<float>(v);
    sum += v;
  }
  for (auto& k : kernel) k = static_cast<float>(k / sum);
  const int h = img.h(), w = img.w();
  Image tmp(1, 1, h, w);
  // horizontal pass, clamped borders
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.f;
      for (int i = -radius; i <= radius; ++i) {
        const int xi = std::clamp(x + i, 0, w - 1);
        acc += kernel[i + radius] * img.at(0, 0, y, xi);
      }
      tmp.at(0, 0, y, x) = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.f;
      for (int i = -radius; i <= radius; ++i) {
        const int yi = std::clamp(y + i, 0, h - 1);
        acc += kernel[i + radius] * tmp.at(0, 0, yi, x);
      }
      img.at(0, 0, y, x) = acc;
    }
}

/// Renders one healthy slice: crisp concentric anatomy, Gaussian blur as a
/// partial-volume stand-in, then i.i.d. noise, clamped to [0,1]. The ground
/// truth mask is taken from the crisp geometry before blurring.
inline Slice render_healthy_slice(const PatientAnatomy& a, int slice_index, int slices_per_patient,
                                  const CohortConfig& cfg, Rng& rng) {
  const int S = cfg.image_size;
  const double t = slices_per_patient > 1
                       ? static_cast<double>(slice_index) / slices_per_patient
                       : 0.0;
  const double cx = a.cx + a.m_cx.eval(t);
  const double cy = a.cy + a.m_cy.eval(t);
  const double rx = a.rx * (1.0 + a.m_rx.eval(t));
  const double ry = a.ry * (1.0 + a.m_ry.eval(t));
  const double mrx = rx - a.fat_thickness;
  const double mry = ry - a.fat_thickness;
  const double bx = cx + a.bone_dx * (mrx - a.bone_r);
  const double by = cy + a.bone_dy * (mry - a.bone_r);

  Slice s;
  s.slice_index = slice_index;
  s.domain = Domain::HEALTHY;
  s.severity = Severity::HEALTHY;
  s.pixels = Image(1, 1, S, S);
  s.gt_mask = Mask(1, 1, S, S);
  s.infiltration_mask = Mask(1, 1, S, S);

  const auto& ti = cfg.intensities;
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const double u = (x + 0.5) / S;
      const double v = (y + 0.5) / S;
      const double q_thigh = sq((u - cx) / rx) + sq((v - cy) / ry);
      const double q_muscle = sq((u - cx) / mrx) + sq((v - cy) / mry);
      const double q_bone = (sq(u - bx) + sq(v - by)) / sq(a.bone_r);
      double val = ti.background;
      bool muscle = false;
      if (q_thigh <= 1.0) {
        if (q_muscle <= 1.0) {
          if (q_bone <= 1.0) {
            val = ti.bone;
          } else {
            val = ti.muscle;
            muscle = true;
          }
        } else {
          val = ti.subcutaneous_fat;
        }
      }
      s.pixels.at(0, 0, y, x) = static_cast<float>(val);
      s.gt_mask.at(0, 0, y, x) = muscle ? 1 : 0;
    }

  gaussian_blur_inplace(s.pixels, cfg.blur_sigma);
  for (std::size_t i = 0; i < s.pixels.size(); ++i) {
    const double noisy = s.pixels[i] + rng.normal(0.0, cfg.noise_std);
    s.pixels[i] = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
  }
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// pathologize: realize the many-to-one map by injecting smooth fat blobs
// ---------------------------------------------------------------------------

/// Derives a pathological slice from a healthy one. Pixel values equal the
/// input everywhere outside the infiltration mask; inside, intensities are
/// blended up to the infiltration level through a compact smooth profile, so
/// the twin difference is confined exactly to the mask. Two seeds give two
/// distinct pathological realizations of the same healthy anatomy.
inline Slice pathologize(const Slice& healthy, Severity severity, std::uint64_t seed,
                         const CohortConfig& cfg) {
  if (healthy.domain != Domain::HEALTHY)
    throw std::invalid_argument("pathologize: input slice must be healthy");
  if (severity == Severity::HEALTHY)
    throw std::invalid_argument("pathologize: severity must be moderate or severe");

  const IntRange counts =
      severity == Severity::MODERATE ? cfg.moderate_blob_count : cfg.severe_blob_count;
  const RealRange fractions =
      severity == Severity::MODERATE ? cfg.moderate_area_fraction : cfg.severe_area_fraction;

  Slice out = healthy;
  out.domain = Domain::PATHOLOGICAL;
  out.severity = severity;
  out.infiltration_mask.fill(0);
  out.healthy_twin_id = healthy.id;
  out.oracle_twin = false;

  const int S = healthy.pixels.h();
  std::vector<int> muscle_px;
  muscle_px.reserve(healthy.gt_mask.size());
  for (std::size_t i = 0; i < healthy.gt_mask.size(); ++i)
    if (healthy.gt_mask[i]) muscle_px.push_back(static_cast<int>(i));

  if (fractions.hi <= 0.0 || counts.hi <= 0 || muscle_px.empty()) {
    // Degenerate severity: nothing to inject. The slice invariants tie the
    // domain tag to an empty infiltration mask.
    out.domain = Domain::HEALTHY;
    out.severity = Severity::HEALTHY;
    out.healthy_twin_id.clear();
    return out;
  }

  Rng rng(seed);
  const double muscle_area = static_cast<double>(muscle_px.size());
  constexpr double kEdge = 1.35;  // support ends at q = kEdge, core at q = 1
  constexpr int kMaxAttempts = 200;

  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const int count = static_cast<int>(rng.uniform_int(std::max(1, counts.lo), counts.hi));
    const double target = rng.uniform(fractions.lo, fractions.hi);

    std::vector<float> blend(healthy.pixels.size(), 0.f);
    std::vector<float> level(healthy.pixels.size(), 0.f);
    for (int bi = 0; bi < count; ++bi) {
      const int center_idx = muscle_px[rng.uniform_int(0, static_cast<std::int64_t>(muscle_px.size()) - 1)];
      const int cyp = center_idx / S;
      const int cxp = center_idx % S;
      const double support_area = target * muscle_area / count * rng.uniform(0.75, 1.25);
      const double aspect = rng.uniform(1.0, 2.5);
      const double ab = support_area / (3.14159265358979 * kEdge);  // a*b for the core ellipse
      const double a = std::sqrt(ab * aspect);
      const double b = ab / a;
      const double theta = rng.uniform(0.0, 3.14159265358979);
      const double ct = std::cos(theta), st = std::sin(theta);
      const double intensity = std::clamp(
          cfg.intensities.infiltration + rng.uniform(-0.02, 0.02), 0.0, 1.0);
      const int reach = static_cast<int>(std::ceil(std::max(a, b) * std::sqrt(kEdge))) + 1;
      for (int y = std::max(0, cyp - reach); y <= std::min(S - 1, cyp + reach); ++y)
        for (int x = std::max(0, cxp - reach); x <= std::min(S - 1, cxp + reach); ++x) {
          if (!healthy.gt_mask.at(0, 0, y, x)) continue;  // clip to muscle
          const double dx = x - cxp, dy = y - cyp;
          const double xr = dx * ct + dy * st;
          const double yr = -dx * st + dy * ct;
          const double q = detail::sq(xr / a) + detail::sq(yr / b);
          if (q >= kEdge) continue;
          const double sblob = std::min(1.0, (kEdge - q) / (kEdge - 1.0));
          const std::size_t idx = static_cast<std::size_t>(y) * S + x;
          if (sblob > blend[idx]) {
            blend[idx] = static_cast<float>(sblob);
            level[idx] = static_cast<float>(intensity);
          }
        }
    }

    std::size_t mask_px = 0;
    for (float v : blend)
      if (v > 0.f) ++mask_px;
    const double achieved = mask_px / muscle_area;
    if (achieved < fractions.lo || achieved > fractions.hi) continue;

    for (std::size_t i = 0; i < blend.size(); ++i) {
      if (blend[i] <= 0.f) continue;
      out.infiltration_mask[i] = 1;
      out.pixels[i] = healthy.pixels[i] + (level[i] - healthy.pixels[i]) * blend[i];
    }
    return out;
  }
  throw std::runtime_error("pathologize: could not satisfy blob area fraction after bounded retries");
}

// ---------------------------------------------------------------------------
// Cohort generation
// ---------------------------------------------------------------------------

struct Cohort {
  CohortConfig config;
  std::vector<PatientInfo> patients;
  std::vector<Slice> slices;
};

namespace detail {

inline std::string patient_label(Severity sev, int index) {
  const char prefix = sev == Severity::HEALTHY ? 'H' : (sev == Severity::MODERATE ? 'M' : 'S');
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%c%02d", prefix, index + 1);
  return buf;
}

inline std::string slice_label(const std::string& patient, int slice_index, bool twin) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "_s%02d", slice_index);
  return patient + buf + (twin ? "_twin" : "");
}

}  // namespace detail

/// Deterministically generates the full synthetic cohort. Pathological
/// patients are built by pathologizing an internally rendered healthy twin;
/// the twin is kept (flagged oracle_twin) but the data loader never pairs it
/// with its pathological counterpart.
inline Cohort generate_cohort(const CohortConfig& cfg) {
  cfg.validate();

  // Geometry feasibility: the smallest muscle compartment must be able to
  // host the largest requested blob load.
  {
    const double min_muscle_r = 0.34 - 0.09;  // tightest thigh minus thickest fat ring
    const double min_muscle_area = 3.141 * min_muscle_r * min_muscle_r - 3.141 * 0.10 * 0.10;
    const double area_px = min_muscle_area * cfg.image_size * cfg.image_size;
    const double worst_fraction =
        std::max(cfg.n_moderate_patients > 0 ? cfg.moderate_area_fraction.hi : 0.0,
                 cfg.n_severe_patients > 0 ? cfg.severe_area_fraction.hi : 0.0);
    if (worst_fraction > 0.0 && worst_fraction * area_px < 4.0)
      throw std::invalid_argument("generate_cohort: blob ranges infeasible for muscle geometry");
  }

  Cohort cohort;
  cohort.config = cfg;

  struct Group {
    Severity sev;
    int count;
  };
  const Group groups[3] = {{Severity::HEALTHY, cfg.n_healthy_patients},
                           {Severity::MODERATE, cfg.n_moderate_patients},
                           {Severity::SEVERE, cfg.n_severe_patients}};

  int global_index = 0;
  for (const auto& g : groups) {
    for (int p = 0; p < g.count; ++p, ++global_index) {
      PatientInfo info;
      info.id = detail::patient_label(g.sev, p);
      info.severity = g.sev;
      cohort.patients.push_back(info);

      Rng patient_rng(derive_seed(cfg.seed, "patient", static_cast<std::uint64_t>(global_index)));
      const auto anatomy = detail::draw_anatomy(patient_rng);

      for (int s = 0; s < cfg.slices_per_patient; ++s) {
        Slice healthy = detail::render_healthy_slice(anatomy, s, cfg.slices_per_patient, cfg,
                                                     patient_rng);
        healthy.patient_id = info.id;

        if (g.sev == Severity::HEALTHY) {
          healthy.id = detail::slice_label(info.id, s, false);
          cohort.slices.push_back(std::move(healthy));
        } else {
          healthy.id = detail::slice_label(info.id, s, true);
          healthy.oracle_twin = true;
          Slice sick = pathologize(
              healthy, g.sev,
              derive_seed(cfg.seed, "patho", static_cast<std::uint64_t>(global_index),
                          static_cast<std::uint64_t>(s)),
              cfg);
          sick.id = detail::slice_label(info.id, s, false);
          cohort.slices.push_back(std::move(healthy));
          cohort.slices.push_back(std::move(sick));
        }
      }
    }
  }
  return cohort;
}

// ---------------------------------------------------------------------------
// Patient-level stratified folds
// ---------------------------------------------------------------------------

/// Stratified k-fold assignment on patient level. Healthy patients are
/// balanced on their own; moderate and severe share a running pathological
/// counter so the combined pathological load per fold also differs by at
/// most one.
inline FoldPlan make_folds(const std::vector<PatientInfo>& patients, int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("make_folds: k must be >= 2");

  std::vector<std::string> healthy, moderate, severe;
  for (const auto& p : patients) {
    switch (p.severity) {
      case Severity::HEALTHY: healthy.push_back(p.id); break;
      case Severity::MODERATE: moderate.push_back(p.id); break;
      case Severity::SEVERE: severe.push_back(p.id); break;
    }
  }
  for (const auto* stratum : {&healthy, &moderate, &severe})
    if (!stratum->empty() && static_cast<int>(stratum->size()) < k)
      throw std::invalid_argument("make_folds: too few patients in a stratum for k folds");

  FoldPlan plan;
  plan.k = k;
  Rng rng(seed);

  auto deal = [&](std::vector<std::string> ids, std::vector<int>& counter) {
    std::sort(ids.begin(), ids.end());
    rng.shuffle(ids.begin(), ids.end());
    const int n = static_cast<int>(ids.size());
    std::vector<int> take(k, n / k);
    int extras = n % k;
    // hand the remainder to the folds with the lightest cumulative load
    std::vector<int> order(k);
    for (int i = 0; i < k; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return counter[a] < counter[b]; });
    for (int e = 0; e < extras; ++e) take[order[e]] += 1;
    int cursor = 0;
    for (int f = 0; f < k; ++f)
      for (int t = 0; t < take[f]; ++t) {
        plan.assignment[ids[cursor++]] = f;
        counter[f] += 1;
      }
  };

  std::vector<int> healthy_counter(k, 0);
  std::vector<int> patho_counter(k, 0);
  if (!healthy.empty()) deal(healthy, healthy_counter);
  if (!moderate.empty()) deal(moderate, patho_counter);
  if (!severe.empty()) deal(severe, patho_counter);
  return plan;
}

}  // namespace asymcycle
