#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "asymcycle/experiment.hpp"
#include "asymcycle/stats.hpp"

using namespace asymcycle;

namespace {

namespace fs = std::filesystem;

std::string file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

/// A two-fold, one-repeat experiment small enough to train inside a test.
ExperimentConfig mini_config(const fs::path& dir) {
  ExperimentConfig cfg = profile_defaults("desk");
  cfg.output_dir = dir;
  cfg.master_seed = 31;
  cfg.k_folds = 2;
  cfg.repeats = 1;
  cfg.weights = {0.5};
  cfg.cohort.image_size = 32;
  cfg.cohort.n_healthy_patients = 2;
  cfg.cohort.n_moderate_patients = 2;
  cfg.cohort.n_severe_patients = 2;
  cfg.cohort.slices_per_patient = 2;
  cfg.train.epochs = 1;
  cfg.generator = GeneratorSpec{2, 2, Norm::INSTANCE, 0.02};
  cfg.discriminator = DiscriminatorSpec{2, 2, 0.02};
  return cfg;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("seed chain: repeats move training seeds but not cohort or folds") {
  auto cfg = mini_config("unused");
  const RunCell a{CycleMode::SYMMETRIC, 0.5, 0, 0};
  const RunCell b{CycleMode::SYMMETRIC, 0.5, 0, 1};
  CHECK(train_seed_for(cfg, a) != train_seed_for(cfg, b));
  CHECK(model_seeds_for(cfg, a).to_healthy != model_seeds_for(cfg, b).to_healthy);
  // cohort and fold seeds are derived from the master seed alone
  CHECK(derive_seed(cfg.master_seed, "cohort") == derive_seed(cfg.master_seed, "cohort"));
  // the two arms of one cell share every seed
  const RunCell sym{CycleMode::SYMMETRIC, 0.5, 1, 2};
  const RunCell asym{CycleMode::ASYMMETRIC, 0.5, 1, 2};
  CHECK(train_seed_for(cfg, sym) == train_seed_for(cfg, asym));
  CHECK(model_seeds_for(cfg, sym).disc_healthy == model_seeds_for(cfg, asym).disc_healthy);
}

TEST_CASE("the default grid enumerates 2 modes x 3 weights x 5 folds x 3 repeats = 90 cells") {
  const auto cfg = profile_defaults("desk");
  CHECK(enumerate_cells(cfg).size() == 90);
}

TEST_CASE("gen-data: reference counts, refusal, and byte-identical regeneration") {
  TempDir tmp("asymcycle_test_gendata");
  ExperimentConfig cfg = profile_defaults("desk");
  cfg.output_dir = tmp.path;
  cfg.cohort.slices_per_patient = 1;  // keep the default 41 patients but one slice each

  const auto cohort_dir = cmd_gen_data(cfg, false);
  const auto manifest = ordered_json::parse(std::ifstream(cohort_dir / "manifest.json"));
  int healthy = 0, moderate = 0, severe = 0;
  for (const auto& p : manifest.at("patients")) {
    const auto sev = p.at("severity").get<std::string>();
    healthy += sev == "healthy";
    moderate += sev == "moderate";
    severe += sev == "severe";
  }
  CHECK(healthy == 21);
  CHECK(moderate == 7);
  CHECK(severe == 13);
  CHECK(manifest.at("patients").size() == 41);

  CHECK_THROWS_AS(cmd_gen_data(cfg, false), Refused);

  const auto before = file_bytes(cohort_dir / "manifest.json");
  cmd_gen_data(cfg, true);
  CHECK(before == file_bytes(cohort_dir / "manifest.json"));
}

TEST_CASE("mini experiment: run-grid, evaluate, report end to end") {
  TempDir tmp("asymcycle_test_e2e");
  const auto cfg = mini_config(tmp.path);

  cmd_gen_data(cfg, false);
  auto summary = cmd_run_grid(cfg, 1);
  CHECK(summary.trained == 4);  // 2 modes x 1 weight x 2 folds x 1 repeat
  CHECK(summary.skipped == 0);
  CHECK(summary.diverged == 0);

  // resume skips everything
  summary = cmd_run_grid(cfg, 1);
  CHECK(summary.trained == 0);
  CHECK(summary.skipped == 4);

  // every run directory carries a config echo tied to the experiment hash
  for (const auto& cell : enumerate_cells(cfg)) {
    const auto dir = run_dir_for(tmp.path, cell);
    CHECK(fs::exists(dir / "DONE"));
    CHECK(fs::exists(dir / "model.bin"));
    CHECK(fs::exists(dir / "loss_log.txt"));
    const auto echo = ordered_json::parse(std::ifstream(dir / "config.json"));
    CHECK(echo.at("experiment_hash").get<std::uint64_t>() == experiment_config_hash(cfg));
  }

  // config-hash mismatch refuses to reuse the directory
  auto other = cfg;
  other.master_seed = 999;
  CHECK_THROWS_AS(cmd_run_grid(other, 1), Refused);

  auto eval_summary = cmd_evaluate(cfg, 1, /*levels=*/64);
  CHECK(eval_summary.evaluated == 4);
  eval_summary = cmd_evaluate(cfg, 1, 64);
  CHECK(eval_summary.skipped == 4);

  const auto report = cmd_report(cfg);
  CHECK(fs::exists(report.report_dir / "report.json"));
  CHECK(fs::exists(report.report_dir / "report.txt"));
  // 3 data sets x 1 weight
  CHECK(report.table.cells.size() == 3);
  for (const auto& cell : report.table.cells) {
    CHECK(cell.original.n == cell.n_pairs);
    CHECK(cell.p_two_sided >= 0.0);
    CHECK(cell.p_two_sided <= 1.0);
  }

  // one sample grid per method cell, three panes wide
  for (const auto mode : cfg.modes) {
    const auto ppm = report.report_dir / ("samples_" + cell_group_name(mode, 0.5) + ".ppm");
    REQUIRE(fs::exists(ppm));
    std::ifstream f(ppm, std::ios::binary);
    std::string magic;
    int w = 0, h = 0;
    f >> magic >> w >> h;
    CHECK(magic == "P6");
    CHECK(w == 3 * 32 + 2 * 2);
    CHECK(h > 0);
  }
}

TEST_CASE("report refuses an incomplete grid and writes a completeness report") {
  TempDir tmp("asymcycle_test_incomplete");
  const auto cfg = mini_config(tmp.path);
  cmd_gen_data(cfg, false);
  CHECK_THROWS_AS(cmd_report(cfg), IncompleteGrid);
  CHECK(fs::exists(tmp.path / "report" / "completeness.txt"));
}

TEST_CASE("end-to-end reproducibility: same master seed gives identical reports") {
  TempDir tmp_a("asymcycle_test_repro_a");
  TempDir tmp_b("asymcycle_test_repro_b");
  auto cfg_a = mini_config(tmp_a.path);
  auto cfg_b = mini_config(tmp_b.path);

  for (const auto* cfg : {&cfg_a, &cfg_b}) {
    cmd_gen_data(*cfg, false);
    cmd_run_grid(*cfg, 1);
    cmd_evaluate(*cfg, 1, 64);
    cmd_report(*cfg);
  }
  CHECK(file_bytes(tmp_a.path / "report" / "report.json") ==
        file_bytes(tmp_b.path / "report" / "report.json"));
  CHECK(file_bytes(tmp_a.path / "report" / "report.txt") ==
        file_bytes(tmp_b.path / "report" / "report.txt"));
  CHECK(file_bytes(tmp_a.path / "cohort" / "manifest.json") ==
        file_bytes(tmp_b.path / "cohort" / "manifest.json"));
}

TEST_CASE("output root environment override reroots relative directories") {
  auto cfg = mini_config("rel/exp");
  setenv("ASYMCYCLE_OUTPUT_ROOT", "/tmp/asymcycle_root", 1);
  CHECK(resolve_output_dir(cfg) == fs::path("/tmp/asymcycle_root/rel/exp"));
  cfg.output_dir = "/abs/exp";
  CHECK(resolve_output_dir(cfg) == fs::path("/abs/exp"));
  unsetenv("ASYMCYCLE_OUTPUT_ROOT");
  cfg.output_dir = "rel/exp";
  CHECK(resolve_output_dir(cfg) == fs::path("rel/exp"));
}

TEST_CASE("experiment config json round-trips and hashes ignore the output location") {
  auto cfg = mini_config("somewhere");
  const auto j = to_json(cfg);
  const auto back = experiment_config_from_json(j);
  CHECK(experiment_config_hash(back) == experiment_config_hash(cfg));
  auto moved = cfg;
  moved.output_dir = "elsewhere";
  CHECK(experiment_config_hash(moved) == experiment_config_hash(cfg));
  auto reseeded = cfg;
  reseeded.master_seed += 1;
  CHECK(experiment_config_hash(reseeded) != experiment_config_hash(cfg));
}

// ---------------------------------------------------------------------------
// pseudo-healthy evaluation
// ---------------------------------------------------------------------------

namespace {

CohortConfig crisp_config() {
  CohortConfig cfg;
  cfg.image_size = 32;
  cfg.n_healthy_patients = 2;
  cfg.n_moderate_patients = 2;
  cfg.n_severe_patients = 2;
  cfg.slices_per_patient = 2;
  cfg.blur_sigma = 0.0;  // noise-free phantom: exact intensity bands
  cfg.noise_std = 0.0;
  cfg.seed = 13;
  return cfg;
}

}  // namespace

TEST_CASE("oracle heal map: twin pixels threshold to a perfect dsc on crisp phantoms") {
  const auto cohort = generate_cohort(crisp_config());
  int checked = 0;
  for (const auto& s : cohort.slices) {
    if (s.domain != Domain::PATHOLOGICAL) continue;
    const Slice* twin = nullptr;
    for (const auto& t : cohort.slices)
      if (t.id == s.healthy_twin_id) twin = &t;
    REQUIRE(twin != nullptr);
    const auto r = optimal_two_threshold(twin->pixels, s.gt_mask, 256);
    CHECK(r.dsc == 1.0);
    ++checked;
  }
  CHECK(checked > 0);
}

TEST_CASE("blur and noise make raw pathological slices threshold imperfectly") {
  // on crisp phantoms the infiltration band can be separated from the fat
  // ring; the partial-volume blur plus noise is what closes that gap
  CohortConfig cfg;
  cfg.n_healthy_patients = 1;
  cfg.n_moderate_patients = 0;
  cfg.n_severe_patients = 2;
  cfg.slices_per_patient = 2;
  cfg.seed = 17;
  const auto cohort = generate_cohort(cfg);
  double acc = 0.0;
  int n = 0;
  for (const auto& s : cohort.slices) {
    if (s.domain != Domain::PATHOLOGICAL) continue;
    acc += optimal_two_threshold(s.pixels, s.gt_mask, 256).dsc;
    ++n;
  }
  REQUIRE(n == 4);
  CHECK(acc / n < 0.98);
}

TEST_CASE("fat-fraction marker with the oracle heal map tracks true infiltration area") {
  CohortConfig cfg;
  cfg.image_size = 32;
  cfg.n_healthy_patients = 1;
  cfg.n_moderate_patients = 0;
  cfg.n_severe_patients = 6;
  cfg.slices_per_patient = 3;
  cfg.seed = 29;
  const auto cohort = generate_cohort(cfg);

  std::vector<double> markers, fractions;
  for (const auto& s : cohort.slices) {
    if (s.domain == Domain::HEALTHY && !s.oracle_twin) {
      // healthy slice healed by the oracle is itself: marker must vanish
      CHECK(fat_fraction_marker(s.pixels, s.pixels) == 0.0);
      continue;
    }
    if (s.domain != Domain::PATHOLOGICAL) continue;
    const Slice* twin = nullptr;
    for (const auto& t : cohort.slices)
      if (t.id == s.healthy_twin_id) twin = &t;
    REQUIRE(twin != nullptr);
    const double marker = fat_fraction_marker(s.pixels, twin->pixels);
    CHECK(marker > 0.0);
    std::size_t area = 0, muscle = 0;
    for (std::size_t i = 0; i < s.infiltration_mask.size(); ++i) {
      area += s.infiltration_mask[i] != 0;
      muscle += s.gt_mask[i] != 0;
    }
    markers.push_back(marker);
    fractions.push_back(double(area) / double(muscle));
  }
  REQUIRE(markers.size() >= 10);
  CHECK(spearman_rank_correlation(markers, fractions) > 0.0);
}

TEST_CASE("pseudo_healthy_eval refuses fingerprint mismatches and stays in the held-out fold") {
  TempDir tmp("asymcycle_test_eval");
  const auto cfg = mini_config(tmp.path);
  cmd_gen_data(cfg, false);
  const auto data = load_cohort(tmp.path / "cohort");

  auto bundle = build_bundle<float>(cfg.generator, cfg.discriminator, 1, 2, 3, 4);
  bundle.fingerprint.cohort_hash = data.manifest_hash;
  bundle.fingerprint.held_out_fold = 0;

  const auto evals = pseudo_healthy_eval(bundle, data.cohort, data.folds, data.manifest_hash, 64);
  REQUIRE_FALSE(evals.empty());
  int originals = 0, translated = 0;
  for (const auto& e : evals) {
    CHECK(data.folds.assignment.at(e.patient_id) == 0);
    CHECK(e.dsc >= 0.0);
    CHECK(e.dsc <= 1.0);
    CHECK(e.t_low <= e.t_high);
    originals += e.source == EvalSource::ORIGINAL;
    translated += e.source == EvalSource::TRANSLATED;
  }
  CHECK(originals == translated);

  bundle.fingerprint.cohort_hash ^= 1;
  CHECK_THROWS_AS(pseudo_healthy_eval(bundle, data.cohort, data.folds, data.manifest_hash, 64),
                  std::invalid_argument);
  bundle.fingerprint.cohort_hash = data.manifest_hash;
  bundle.fingerprint.held_out_fold = 7;
  CHECK_THROWS_AS(pseudo_healthy_eval(bundle, data.cohort, data.folds, data.manifest_hash, 64),
                  std::invalid_argument);
}

// ---------------------------------------------------------------------------
// aggregation
// ---------------------------------------------------------------------------

namespace {

std::vector<PatientInfo> table_patients() {
  std::vector<PatientInfo> out;
  for (int i = 0; i < 7; ++i)
    out.push_back({"M" + std::to_string(10 + i), Severity::MODERATE});
  for (int i = 0; i < 13; ++i)
    out.push_back({"S" + std::to_string(10 + i), Severity::SEVERE});
  return out;
}

std::vector<EvalRow> grid_rows(const std::vector<PatientInfo>& patients, double moderate_score,
                               double severe_score, double asym_bonus) {
  std::vector<EvalRow> rows;
  for (const auto& p : patients)
    for (const std::string method : {"symmetric", "asymmetric"})
      for (int rep = 0; rep < 2; ++rep) {
        EvalRow r;
        r.patient_id = p.id;
        r.slice_index = 0;
        r.method = method;
        r.w_c = 0.5;
        r.fold = 0;
        r.repeat = rep;
        const double base = p.severity == Severity::MODERATE ? moderate_score : severe_score;
        r.source = EvalSource::TRANSLATED;
        r.dsc = base + (method == "asymmetric" ? asym_bonus : 0.0);
        rows.push_back(r);
        r.source = EvalSource::ORIGINAL;
        r.dsc = base;
        rows.push_back(r);
      }
  return rows;
}

}  // namespace

TEST_CASE("aggregation: merged set is recomputed from the union of patients") {
  const auto patients = table_patients();
  FoldPlan folds;
  folds.k = 1;
  const auto rows = grid_rows(patients, 0.85, 0.80, 0.0);
  const auto table = aggregate_and_report(rows, patients, folds, {0.5},
                                          {"symmetric", "asymmetric"}, 1, 2);
  REQUIRE(table.cells.size() == 3);
  const auto& merged = table.cells[2];
  CHECK(merged.dataset == "pathological");
  // (7 * 0.85 + 13 * 0.80) / 20
  CHECK(merged.original.mean == Catch::Approx(0.8175).epsilon(1e-12));
  CHECK(merged.symmetric.mean == Catch::Approx(0.8175).epsilon(1e-12));
  CHECK(merged.n_pairs == 20);

  // identical scores per patient: p-value 1, zero mean difference
  CHECK(merged.p_two_sided == 1.0);
  CHECK(merged.asymmetric.mean == merged.symmetric.mean);

  // constant scores aggregate to exactly the constant
  const auto flat = aggregate_and_report(grid_rows(patients, 0.75, 0.75, 0.0), patients, folds,
                                         {0.5}, {"symmetric", "asymmetric"}, 1, 2);
  for (const auto& cell : flat.cells) {
    CHECK(cell.symmetric.mean == 0.75);
    CHECK(cell.symmetric.stddev == 0.0);
  }
}

TEST_CASE("aggregation: a consistent asymmetric advantage is significant") {
  const auto patients = table_patients();
  FoldPlan folds;
  folds.k = 1;
  const auto rows = grid_rows(patients, 0.85, 0.80, 0.02);
  const auto table = aggregate_and_report(rows, patients, folds, {0.5},
                                          {"symmetric", "asymmetric"}, 1, 2);
  const auto& severe = table.cells[1];
  CHECK(severe.dataset == "severe");
  CHECK(severe.asymmetric.mean == Catch::Approx(0.82).epsilon(1e-12));
  CHECK(severe.p_one_sided < 0.001);  // 13 positive paired differences
  CHECK(severe.p_two_sided < 0.001);
}

TEST_CASE("aggregation refuses missing grid cells with a completeness message") {
  const auto patients = table_patients();
  FoldPlan folds;
  folds.k = 1;
  auto rows = grid_rows(patients, 0.85, 0.80, 0.0);
  CHECK_THROWS_AS(aggregate_and_report(rows, patients, folds, {0.5},
                                       {"symmetric", "asymmetric"}, /*n_folds=*/2, 2),
                  IncompleteGrid);
  try {
    aggregate_and_report(rows, patients, folds, {0.5}, {"symmetric", "asymmetric"}, 2, 2);
  } catch (const IncompleteGrid& e) {
    CHECK(std::string(e.what()).find("f1") != std::string::npos);
  }
}

TEST_CASE("report text renders one row per data set and weight with a band marker") {
  const auto patients = table_patients();
  FoldPlan folds;
  folds.k = 1;
  const auto table = aggregate_and_report(grid_rows(patients, 0.85, 0.80, 0.02), patients, folds,
                                          {0.5}, {"symmetric", "asymmetric"}, 1, 2);
  const auto plain = render_report_text(table, false);
  CHECK(plain.find("moderate") != std::string::npos);
  CHECK(plain.find("severe") != std::string::npos);
  CHECK(plain.find("pathological") != std::string::npos);
  CHECK(plain.find("**") != std::string::npos);
  CHECK(plain.find("\x1b[") == std::string::npos);
  const auto colored = render_report_text(table, true);
  CHECK(colored.find("\x1b[32m") != std::string::npos);
}
