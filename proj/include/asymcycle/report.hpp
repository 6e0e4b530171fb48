#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "asymcycle/eval.hpp"
#include "asymcycle/losses.hpp"
#include "asymcycle/phantom.hpp"
#include "asymcycle/stats.hpp"

namespace asymcycle {

struct IncompleteGrid : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Per-patient score: per-repeat values (mean DSC over the patient's
/// evaluated slices) plus their mean over repeats.
struct PatientScore {
  std::string patient_id;
  Severity severity = Severity::MODERATE;
  std::vector<double> per_repeat;
  double mean = 0.0;

  void finalize() {
    double acc = 0.0;
    for (double v : per_repeat) acc += v;
    mean = per_repeat.empty() ? 0.0 : acc / per_repeat.size();
  }
};

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // sample std over patients
  int n = 0;
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd out;
  out.n = static_cast<int>(v.size());
  if (v.empty()) return out;
  double acc = 0.0;
  for (double x : v) acc += x;
  out.mean = acc / v.size();
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - out.mean) * (x - out.mean);
    out.stddev = std::sqrt(ss / (v.size() - 1));
  }
  return out;
}

/// One Table row: a data set at one cycle weight; methods side by side plus
/// the paired significance of asymmetric vs symmetric.
struct ReportCell {
  std::string dataset;  // "moderate" | "severe" | "pathological"
  double w_c = 0.0;
  MeanStd original;
  MeanStd symmetric;
  MeanStd asymmetric;
  double p_two_sided = 1.0;
  double p_one_sided = 1.0;
  bool degenerate = false;
  int n_pairs = 0;
};

struct ReportTable {
  std::vector<double> weights;
  std::vector<ReportCell> cells;  // 3 datasets x |weights|
  // per-patient detail retained for auditing
  std::map<std::string, PatientScore> original_scores;
  std::map<std::string, std::map<std::string, PatientScore>> method_scores;
  // key: "<method>@<w_c>" -> patient -> score
};

namespace detail {

inline std::string method_key(const std::string& method, double w_c) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s@%.17g", method.c_str(), w_c);
  return buf;
}

}  // namespace detail

/// Aggregates per-slice rows into the Table-1-shaped comparison grid.
/// Slices aggregate to patients first (mean over slices, then over repeats);
/// data-set statistics are computed across patients; the merged pathological
/// set is recomputed from the union of moderate and severe patients. Refuses
/// to aggregate when any expected (mode, weight, fold, repeat) cell is
/// missing.
inline ReportTable aggregate_and_report(
    const std::vector<EvalRow>& rows, const std::vector<PatientInfo>& patients,
    const FoldPlan& folds, const std::vector<double>& weights,
    const std::vector<std::string>& methods, int n_folds, int n_repeats) {
  // completeness over expected run cells
  std::set<std::string> present;
  for (const auto& r : rows) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s@%.17g/f%d/r%d", r.method.c_str(), r.w_c, r.fold, r.repeat);
    present.insert(buf);
  }
  std::vector<std::string> missing;
  for (const auto& m : methods)
    for (double w : weights)
      for (int f = 0; f < n_folds; ++f)
        for (int rep = 0; rep < n_repeats; ++rep) {
          char buf[96];
          std::snprintf(buf, sizeof(buf), "%s@%.17g/f%d/r%d", m.c_str(), w, f, rep);
          if (!present.count(buf)) missing.push_back(buf);
        }
  if (!missing.empty()) {
    std::string msg = "incomplete evaluation grid; missing cells:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw IncompleteGrid(msg);
  }

  std::map<std::string, Severity> severity_of;
  for (const auto& p : patients) severity_of[p.id] = p.severity;

  ReportTable table;
  table.weights = weights;

  // ORIGINAL scores: model-independent, deduplicated by (patient, slice)
  {
    std::map<std::string, std::map<int, double>> per_patient;
    for (const auto& r : rows)
      if (r.source == EvalSource::ORIGINAL) per_patient[r.patient_id][r.slice_index] = r.dsc;
    for (const auto& [pid, slices] : per_patient) {
      PatientScore score;
      score.patient_id = pid;
      score.severity = severity_of.at(pid);
      double acc = 0.0;
      for (const auto& [idx, d] : slices) acc += d;
      score.per_repeat = {acc / slices.size()};
      score.finalize();
      table.original_scores[pid] = score;
    }
  }

  // TRANSLATED scores per (method, w_c): slices -> per-repeat mean -> mean
  for (const auto& m : methods)
    for (double w : weights) {
      std::map<std::string, std::map<int, std::vector<double>>> acc;  // patient -> repeat -> dscs
      for (const auto& r : rows) {
        if (r.source != EvalSource::TRANSLATED || r.method != m || r.w_c != w) continue;
        acc[r.patient_id][r.repeat].push_back(r.dsc);
      }
      auto& dst = table.method_scores[detail::method_key(m, w)];
      for (auto& [pid, repeats] : acc) {
        PatientScore score;
        score.patient_id = pid;
        score.severity = severity_of.at(pid);
        for (auto& [rep, dscs] : repeats) {
          double s = 0.0;
          for (double d : dscs) s += d;
          score.per_repeat.push_back(s / dscs.size());
        }
        score.finalize();
        dst[pid] = score;
      }
    }

  // table cells
  const std::vector<std::pair<std::string, std::vector<Severity>>> datasets = {
      {"moderate", {Severity::MODERATE}},
      {"severe", {Severity::SEVERE}},
      {"pathological", {Severity::MODERATE, Severity::SEVERE}}};

  for (const auto& [name, severities] : datasets) {
    std::vector<std::string> ids;
    for (const auto& p : patients)
      if (std::find(severities.begin(), severities.end(), p.severity) != severities.end())
        ids.push_back(p.id);
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) continue;

    for (double w : weights) {
      ReportCell cell;
      cell.dataset = name;
      cell.w_c = w;
      std::vector<double> orig, sym, asym;
      for (const auto& pid : ids) {
        orig.push_back(table.original_scores.at(pid).mean);
        sym.push_back(table.method_scores.at(detail::method_key("symmetric", w)).at(pid).mean);
        asym.push_back(table.method_scores.at(detail::method_key("asymmetric", w)).at(pid).mean);
      }
      cell.original = mean_std(orig);
      cell.symmetric = mean_std(sym);
      cell.asymmetric = mean_std(asym);
      const auto wres = wilcoxon_signed_rank(asym, sym);
      cell.p_two_sided = wres.p_two_sided;
      cell.p_one_sided = wres.p_one_sided_greater;
      cell.degenerate = wres.degenerate;
      cell.n_pairs = static_cast<int>(ids.size());
      table.cells.push_back(cell);
    }
  }
  (void)folds;
  return table;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json report_to_json(const ReportTable& table) {
  nlohmann::ordered_json j;
  j["weights"] = table.weights;
  nlohmann::ordered_json cells = nlohmann::ordered_json::array();
  for (const auto& c : table.cells) {
    cells.push_back({{"dataset", c.dataset},
                     {"w_c", c.w_c},
                     {"original", {{"mean", c.original.mean}, {"std", c.original.stddev}, {"n", c.original.n}}},
                     {"symmetric", {{"mean", c.symmetric.mean}, {"std", c.symmetric.stddev}, {"n", c.symmetric.n}}},
                     {"asymmetric", {{"mean", c.asymmetric.mean}, {"std", c.asymmetric.stddev}, {"n", c.asymmetric.n}}},
                     {"p_two_sided", c.p_two_sided},
                     {"p_one_sided", c.p_one_sided},
                     {"n_pairs", c.n_pairs}});
  }
  j["cells"] = cells;
  nlohmann::ordered_json patients = nlohmann::ordered_json::object();
  for (const auto& [key, scores] : table.method_scores) {
    nlohmann::ordered_json per = nlohmann::ordered_json::object();
    for (const auto& [pid, score] : scores)
      per[pid] = {{"mean", score.mean}, {"per_repeat", score.per_repeat}};
    patients[key] = per;
  }
  j["patient_scores"] = patients;
  nlohmann::ordered_json originals = nlohmann::ordered_json::object();
  for (const auto& [pid, score] : table.original_scores) originals[pid] = score.mean;
  j["original_patient_scores"] = originals;
  return j;
}

/// Aligned text table mirroring the paper's comparison layout. Significance
/// cells are colored by the bands p <= 0.01 (green), 0.01 < p <= 0.05
/// (yellow), p > 0.05 (red) when color is enabled; band markers (**, *, ns)
/// are always printed.
inline std::string render_report_text(const ReportTable& table, bool color) {
  std::string out;
  char buf[256];
  out += "Data set       w_c    original         symmetric        asymmetric       p(asym vs sym)\n";
  out += "---------------------------------------------------------------------------------------\n";
  std::string last_dataset;
  for (const auto& c : table.cells) {
    const char* band = c.p_two_sided <= 0.01 ? "**" : (c.p_two_sided <= 0.05 ? "* " : "ns");
    const char* col_start = "";
    const char* col_end = "";
    if (color) {
      col_start = c.p_two_sided <= 0.01 ? "\x1b[32m" : (c.p_two_sided <= 0.05 ? "\x1b[33m" : "\x1b[31m");
      col_end = "\x1b[0m";
    }
    const std::string shown = c.dataset == last_dataset ? std::string(c.dataset.size(), ' ') : c.dataset;
    last_dataset = c.dataset;
    std::snprintf(buf, sizeof(buf),
                  "%-14s %-5.4g %.3f +- %.3f  %.3f +- %.3f  %.3f +- %.3f  %s%.4f %s%s\n",
                  shown.c_str(), c.w_c, c.original.mean, c.original.stddev, c.symmetric.mean,
                  c.symmetric.stddev, c.asymmetric.mean, c.asymmetric.stddev, col_start,
                  c.p_two_sided, band, col_end);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Qualitative sample grids (binary PPM): per exemplar slice a row of
// [original | translated | threshold-segmentation overlay].
// ---------------------------------------------------------------------------

struct SamplePane {
  Image original;
  Image translated;
  Mask gt_mask;
  double t_low = 0.0, t_high = 0.0;  // thresholds used for the overlay
};

namespace detail {

struct Rgb {
  unsigned char r, g, b;
};

inline Rgb gray(float v) {
  const auto u = static_cast<unsigned char>(std::clamp(v, 0.f, 1.f) * 255.f + 0.5f);
  return {u, u, u};
}

}  // namespace detail

/// Rows of exemplars, three panes per row, 2px separators.
inline void write_sample_grid_ppm(const std::filesystem::path& path,
                                  const std::vector<SamplePane>& panes) {
  if (panes.empty()) throw std::invalid_argument("write_sample_grid_ppm: no panes");
  const int S = panes[0].original.h();
  const int sep = 2;
  const int width = 3 * S + 2 * sep;
  const int height = static_cast<int>(panes.size()) * S + (static_cast<int>(panes.size()) - 1) * sep;
  std::vector<detail::Rgb> canvas(static_cast<std::size_t>(width) * height, {255, 255, 255});

  auto put = [&](int y, int x, detail::Rgb v) {
    canvas[static_cast<std::size_t>(y) * width + x] = v;
  };

  for (std::size_t row = 0; row < panes.size(); ++row) {
    const auto& pane = panes[row];
    const int oy = static_cast<int>(row) * (S + sep);
    const auto seg = segment_by_thresholds(pane.translated, pane.t_low, pane.t_high);
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        put(oy + y, x, detail::gray(pane.original.at(0, 0, y, x)));
        put(oy + y, S + sep + x, detail::gray(pane.translated.at(0, 0, y, x)));
        // overlay: translated image tinted green (hit), red (false positive),
        // blue (missed muscle)
        const float v = pane.translated.at(0, 0, y, x);
        const bool in_seg = seg.at(0, 0, y, x) != 0;
        const bool in_gt = pane.gt_mask.at(0, 0, y, x) != 0;
        detail::Rgb px = detail::gray(v);
        if (in_seg && in_gt)
          px = {static_cast<unsigned char>(px.r / 2), 255, static_cast<unsigned char>(px.b / 2)};
        else if (in_seg && !in_gt)
          px = {255, static_cast<unsigned char>(px.g / 2), static_cast<unsigned char>(px.b / 2)};
        else if (!in_seg && in_gt)
          px = {static_cast<unsigned char>(px.r / 2), static_cast<unsigned char>(px.g / 2), 255};
        put(oy + y, 2 * (S + sep) + x, px);
      }
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "P6\n" << width << " " << height << "\n255\n";
  f.write(reinterpret_cast<const char*>(canvas.data()), canvas.size() * 3);
  if (!f) throw std::runtime_error("short write: " + path.string());
}

}  // namespace asymcycle
