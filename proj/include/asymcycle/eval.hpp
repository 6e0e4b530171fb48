#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "asymcycle/cohort_io.hpp"
#include "asymcycle/metrics.hpp"
#include "asymcycle/nets.hpp"
#include "asymcycle/phantom.hpp"

namespace asymcycle {

enum class EvalSource { ORIGINAL, TRANSLATED };

inline const char* to_string(EvalSource s) {
  return s == EvalSource::ORIGINAL ? "original" : "translated";
}
inline EvalSource eval_source_from_string(const std::string& s) {
  if (s == "original") return EvalSource::ORIGINAL;
  if (s == "translated") return EvalSource::TRANSLATED;
  throw std::invalid_argument("unknown eval source: " + s);
}

/// Optimal-threshold segmentation quality of one slice, either on the raw
/// image or on its pseudo-healthy translation.
struct SliceEval {
  std::string patient_id;
  int slice_index = 0;
  EvalSource source = EvalSource::ORIGINAL;
  double t_low = 0.0;
  double t_high = 0.0;
  double dsc = 0.0;
  double marker = 0.0;  // fat-fraction marker; 0 for ORIGINAL rows
};

/// Runs a [0,1] image through the pseudo-healthy generator.
template <typename T>
Image heal_image(const ModelBundle<T>& bundle, const Image& img01) {
  const auto input = normalize_to_model(img01.cast<T>());
  const auto output = translate(bundle.to_healthy, input);
  return denormalize_from_model(output).template cast<float>();
}

/// Evaluates every pathological slice of the bundle's held-out fold, both on
/// the raw pixels (ORIGINAL baseline) and on the translation (TRANSLATED).
/// Refuses to run when the bundle was trained on a different cohort or fold
/// than the one supplied, which would silently leak training patients into
/// the test set.
template <typename T>
std::vector<SliceEval> pseudo_healthy_eval(const ModelBundle<T>& bundle, const Cohort& cohort,
                                           const FoldPlan& folds, std::uint64_t manifest_hash,
                                           int levels = 256) {
  if (bundle.fingerprint.cohort_hash != manifest_hash)
    throw std::invalid_argument("pseudo_healthy_eval: bundle fingerprint does not match cohort");
  const int fold = bundle.fingerprint.held_out_fold;
  if (fold < 0 || fold >= folds.k)
    throw std::invalid_argument("pseudo_healthy_eval: bundle held-out fold out of range");

  std::vector<SliceEval> out;
  for (const auto& s : cohort.slices) {
    if (s.domain != Domain::PATHOLOGICAL || s.oracle_twin) continue;
    if (folds.assignment.at(s.patient_id) != fold) continue;

    SliceEval orig;
    orig.patient_id = s.patient_id;
    orig.slice_index = s.slice_index;
    orig.source = EvalSource::ORIGINAL;
    const auto r0 = optimal_two_threshold(s.pixels, s.gt_mask, levels);
    orig.t_low = r0.t_low;
    orig.t_high = r0.t_high;
    orig.dsc = r0.dsc;
    out.push_back(orig);

    SliceEval trans = orig;
    trans.source = EvalSource::TRANSLATED;
    const Image healed = heal_image(bundle, s.pixels);
    const auto r1 = optimal_two_threshold(healed, s.gt_mask, levels);
    trans.t_low = r1.t_low;
    trans.t_high = r1.t_high;
    trans.dsc = r1.dsc;
    trans.marker = fat_fraction_marker(s.pixels, healed);
    out.push_back(trans);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Flat CSV: one row per slice evaluation, annotated with the run cell.
// ---------------------------------------------------------------------------

struct EvalRow {
  std::string patient_id;
  int slice_index = 0;
  std::string method;  // "symmetric" | "asymmetric"
  double w_c = 0.0;
  int fold = 0;
  int repeat = 0;
  EvalSource source = EvalSource::ORIGINAL;
  double t_low = 0.0, t_high = 0.0, dsc = 0.0, marker = 0.0;
};

inline void write_eval_csv(const std::filesystem::path& path, const std::vector<EvalRow>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "patient,slice,method,w_c,fold,repeat,source,t_low,t_high,dsc,marker\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%s,%.17g,%d,%d,%s,%.17g,%.17g,%.17g,%.17g\n",
                  r.patient_id.c_str(), r.slice_index, r.method.c_str(), r.w_c, r.fold, r.repeat,
                  to_string(r.source), r.t_low, r.t_high, r.dsc, r.marker);
    f << buf;
  }
}

inline std::vector<EvalRow> read_eval_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::vector<EvalRow> rows;
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto pos = line.find(',', start);
      fields.push_back(line.substr(start, pos - start));
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
    if (fields.size() != 11) throw std::runtime_error("malformed eval csv row: " + line);
    EvalRow r;
    r.patient_id = fields[0];
    r.slice_index = std::stoi(fields[1]);
    r.method = fields[2];
    r.w_c = std::stod(fields[3]);
    r.fold = std::stoi(fields[4]);
    r.repeat = std::stoi(fields[5]);
    r.source = eval_source_from_string(fields[6]);
    r.t_low = std::stod(fields[7]);
    r.t_high = std::stod(fields[8]);
    r.dsc = std::stod(fields[9]);
    r.marker = std::stod(fields[10]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace asymcycle
