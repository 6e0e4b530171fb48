#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "asymcycle/phantom.hpp"

namespace asymcycle {

using ordered_json = nlohmann::ordered_json;

inline ordered_json to_json(const CohortConfig& c) {
  ordered_json j;
  j["image_size"] = c.image_size;
  j["n_healthy_patients"] = c.n_healthy_patients;
  j["n_moderate_patients"] = c.n_moderate_patients;
  j["n_severe_patients"] = c.n_severe_patients;
  j["slices_per_patient"] = c.slices_per_patient;
  j["moderate_blob_count"] = {c.moderate_blob_count.lo, c.moderate_blob_count.hi};
  j["severe_blob_count"] = {c.severe_blob_count.lo, c.severe_blob_count.hi};
  j["moderate_area_fraction"] = {c.moderate_area_fraction.lo, c.moderate_area_fraction.hi};
  j["severe_area_fraction"] = {c.severe_area_fraction.lo, c.severe_area_fraction.hi};
  j["intensities"] = {{"background", c.intensities.background},
                      {"bone", c.intensities.bone},
                      {"muscle", c.intensities.muscle},
                      {"subcutaneous_fat", c.intensities.subcutaneous_fat},
                      {"infiltration", c.intensities.infiltration}};
  j["blur_sigma"] = c.blur_sigma;
  j["noise_std"] = c.noise_std;
  j["seed"] = c.seed;
  return j;
}

inline CohortConfig cohort_config_from_json(const ordered_json& j) {
  CohortConfig c;
  auto get = [&](const char* key, auto& out) {
    if (j.contains(key)) out = j.at(key).get<std::decay_t<decltype(out)>>();
  };
  get("image_size", c.image_size);
  get("n_healthy_patients", c.n_healthy_patients);
  get("n_moderate_patients", c.n_moderate_patients);
  get("n_severe_patients", c.n_severe_patients);
  get("slices_per_patient", c.slices_per_patient);
  auto get_int_range = [&](const char* key, IntRange& r) {
    if (j.contains(key)) {
      r.lo = j.at(key).at(0).get<int>();
      r.hi = j.at(key).at(1).get<int>();
    }
  };
  auto get_real_range = [&](const char* key, RealRange& r) {
    if (j.contains(key)) {
      r.lo = j.at(key).at(0).get<double>();
      r.hi = j.at(key).at(1).get<double>();
    }
  };
  get_int_range("moderate_blob_count", c.moderate_blob_count);
  get_int_range("severe_blob_count", c.severe_blob_count);
  get_real_range("moderate_area_fraction", c.moderate_area_fraction);
  get_real_range("severe_area_fraction", c.severe_area_fraction);
  if (j.contains("intensities")) {
    const auto& t = j.at("intensities");
    auto geti = [&](const char* key, double& out) {
      if (t.contains(key)) out = t.at(key).get<double>();
    };
    geti("background", c.intensities.background);
    geti("bone", c.intensities.bone);
    geti("muscle", c.intensities.muscle);
    geti("subcutaneous_fat", c.intensities.subcutaneous_fat);
    geti("infiltration", c.intensities.infiltration);
  }
  get("blur_sigma", c.blur_sigma);
  get("noise_std", c.noise_std);
  get("seed", c.seed);
  return c;
}

namespace detail {

constexpr char kSliceMagic[4] = {'A', 'C', 'S', 'L'};

inline void write_slice_file(const Slice& s, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(kSliceMagic, 4);
  const std::uint32_t version = 1, h = s.pixels.h(), w = s.pixels.w();
  f.write(reinterpret_cast<const char*>(&version), 4);
  f.write(reinterpret_cast<const char*>(&h), 4);
  f.write(reinterpret_cast<const char*>(&w), 4);
  f.write(reinterpret_cast<const char*>(s.pixels.data()), sizeof(float) * s.pixels.size());
  f.write(reinterpret_cast<const char*>(s.gt_mask.data()), s.gt_mask.size());
  f.write(reinterpret_cast<const char*>(s.infiltration_mask.data()), s.infiltration_mask.size());
  if (!f) throw std::runtime_error("short write: " + path.string());
}

inline void read_slice_file(Slice& s, const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  char magic[4];
  std::uint32_t version = 0, h = 0, w = 0;
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(&version), 4);
  f.read(reinterpret_cast<char*>(&h), 4);
  f.read(reinterpret_cast<char*>(&w), 4);
  if (!f || std::memcmp(magic, kSliceMagic, 4) != 0 || version != 1)
    throw std::runtime_error("bad slice file: " + path.string());
  s.pixels = Image(1, 1, h, w);
  s.gt_mask = Mask(1, 1, h, w);
  s.infiltration_mask = Mask(1, 1, h, w);
  f.read(reinterpret_cast<char*>(s.pixels.data()), sizeof(float) * s.pixels.size());
  f.read(reinterpret_cast<char*>(s.gt_mask.data()), s.gt_mask.size());
  f.read(reinterpret_cast<char*>(s.infiltration_mask.data()), s.infiltration_mask.size());
  if (!f) throw std::runtime_error("truncated slice file: " + path.string());
}

}  // namespace detail

inline std::string slice_relative_path(const Slice& s) {
  return s.patient_id + "/" + s.id + ".acs";
}

/// Writes the cohort as one directory per patient plus manifest.json. The
/// manifest is the single source of truth for folds and evaluation; it is
/// byte-identical across reruns with the same config and seed.
inline void save_cohort(const Cohort& cohort, const FoldPlan& folds,
                        const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  ordered_json manifest;
  manifest["format"] = "asymcycle-cohort";
  manifest["version"] = 1;
  manifest["seed"] = cohort.config.seed;
  manifest["image_size"] = cohort.config.image_size;
  manifest["k_folds"] = folds.k;
  manifest["config"] = to_json(cohort.config);

  ordered_json patients = ordered_json::array();
  for (const auto& p : cohort.patients) {
    ordered_json pj;
    pj["id"] = p.id;
    pj["severity"] = to_string(p.severity);
    pj["fold"] = folds.assignment.at(p.id);
    patients.push_back(pj);
  }
  manifest["patients"] = patients;

  ordered_json slices = ordered_json::array();
  for (const auto& s : cohort.slices) {
    ordered_json sj;
    sj["id"] = s.id;
    sj["patient"] = s.patient_id;
    sj["index"] = s.slice_index;
    sj["domain"] = to_string(s.domain);
    sj["severity"] = to_string(s.severity);
    sj["file"] = slice_relative_path(s);
    sj["twin"] = s.healthy_twin_id.empty() ? ordered_json() : ordered_json(s.healthy_twin_id);
    sj["oracle_twin"] = s.oracle_twin;
    slices.push_back(sj);

    fs::create_directories(dir / s.patient_id);
    detail::write_slice_file(s, dir / slice_relative_path(s));
  }
  manifest["slices"] = slices;

  std::ofstream f(dir / "manifest.json");
  f << manifest.dump(2) << "\n";
  if (!f) throw std::runtime_error("cannot write manifest in " + dir.string());
}

struct LoadedCohort {
  Cohort cohort;
  FoldPlan folds;
  std::uint64_t manifest_hash = 0;  // FNV-1a over manifest bytes
};

inline LoadedCohort load_cohort(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream f(manifest_path);
  if (!f) throw std::runtime_error("no manifest at " + manifest_path.string());
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  LoadedCohort out;
  out.manifest_hash = fnv1a64(text);
  const auto manifest = ordered_json::parse(text);
  if (manifest.at("format") != "asymcycle-cohort")
    throw std::runtime_error("not a cohort manifest: " + manifest_path.string());

  out.cohort.config = cohort_config_from_json(manifest.at("config"));
  out.folds.k = manifest.at("k_folds").get<int>();

  for (const auto& pj : manifest.at("patients")) {
    PatientInfo p;
    p.id = pj.at("id").get<std::string>();
    p.severity = severity_from_string(pj.at("severity").get<std::string>());
    out.cohort.patients.push_back(p);
    out.folds.assignment[p.id] = pj.at("fold").get<int>();
  }

  for (const auto& sj : manifest.at("slices")) {
    Slice s;
    s.id = sj.at("id").get<std::string>();
    s.patient_id = sj.at("patient").get<std::string>();
    s.slice_index = sj.at("index").get<int>();
    s.domain = domain_from_string(sj.at("domain").get<std::string>());
    s.severity = severity_from_string(sj.at("severity").get<std::string>());
    if (!sj.at("twin").is_null()) s.healthy_twin_id = sj.at("twin").get<std::string>();
    s.oracle_twin = sj.at("oracle_twin").get<bool>();
    detail::read_slice_file(s, dir / sj.at("file").get<std::string>());
    out.cohort.slices.push_back(std::move(s));
  }
  return out;
}

}  // namespace asymcycle
