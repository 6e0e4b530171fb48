#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "asymcycle/cohort_io.hpp"
#include "asymcycle/eval.hpp"
#include "asymcycle/report.hpp"
#include "asymcycle/trainer.hpp"

namespace asymcycle {

/// Raised when a command refuses to act (existing outputs without
/// --overwrite, config-hash mismatch against prior state, missing inputs).
struct Refused : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::string profile = "desk";
  std::filesystem::path output_dir = "out/desk";
  std::uint64_t master_seed = 7;
  int k_folds = 5;
  int repeats = 3;
  std::vector<double> weights = {0.25, 0.5, 1.0};
  std::vector<CycleMode> modes = {CycleMode::SYMMETRIC, CycleMode::ASYMMETRIC};
  CohortConfig cohort;       // seed is derived from master_seed at generation
  TrainConfig train;         // seed / cycle mode / w_c filled in per run cell
  GeneratorSpec generator;
  DiscriminatorSpec discriminator;

  void validate() const {
    if (k_folds < 2) throw std::invalid_argument("ExperimentConfig: k_folds must be >= 2");
    if (repeats < 1) throw std::invalid_argument("ExperimentConfig: repeats must be >= 1");
    if (weights.empty() || modes.empty())
      throw std::invalid_argument("ExperimentConfig: empty grid");
    train.validate();
    generator.validate();
    discriminator.validate();
  }
};

/// Desk profile: the full experimental structure of the reference protocol at
/// a scale that completes on a single commodity CPU core. Paper profile:
/// protocol constants kept verbatim (16 epochs, 8 repeats, 256x256 slices).
inline ExperimentConfig profile_defaults(const std::string& profile) {
  ExperimentConfig cfg;
  cfg.profile = profile;
  if (profile == "desk") {
    cfg.output_dir = "out/desk";
    cfg.repeats = 3;
    cfg.train.epochs = 12;
    cfg.generator = GeneratorSpec{3, 8, Norm::INSTANCE, 0.02};
    cfg.discriminator = DiscriminatorSpec{3, 8, 0.02};
  } else if (profile == "paper") {
    cfg.output_dir = "out/paper";
    cfg.repeats = 8;
    cfg.train.epochs = 16;
    cfg.cohort.image_size = 256;
    cfg.cohort.slices_per_patient = 50;
    cfg.generator = GeneratorSpec{5, 32, Norm::INSTANCE, 0.02};
    cfg.discriminator = DiscriminatorSpec{3, 32, 0.02};
  } else {
    throw std::invalid_argument("unknown profile: " + profile + " (expected desk|paper)");
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Config JSON io
// ---------------------------------------------------------------------------

inline ordered_json to_json(const ExperimentConfig& cfg) {
  ordered_json j;
  j["profile"] = cfg.profile;
  j["output_dir"] = cfg.output_dir.string();
  j["master_seed"] = cfg.master_seed;
  j["k_folds"] = cfg.k_folds;
  j["repeats"] = cfg.repeats;
  j["weights"] = cfg.weights;
  ordered_json modes = ordered_json::array();
  for (auto m : cfg.modes) modes.push_back(to_string(m));
  j["modes"] = modes;
  j["cohort"] = to_json(cfg.cohort);
  j["train"] = {{"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"learning_rate", cfg.train.learning_rate},
                {"adam_beta1", cfg.train.adam_beta1},
                {"adam_beta2", cfg.train.adam_beta2},
                {"buffer_capacity", cfg.train.buffer_capacity},
                {"augmentation", cfg.train.augmentation},
                {"gan_weight", cfg.train.loss.gan_weight},
                {"identity_weight", cfg.train.loss.identity_weight}};
  j["generator"] = {{"depth", cfg.generator.depth},
                    {"base_channels", cfg.generator.base_channels},
                    {"norm", cfg.generator.norm == Norm::INSTANCE ? "instance" : "none"},
                    {"init_std", cfg.generator.init_std}};
  j["discriminator"] = {{"n_layers", cfg.discriminator.n_layers},
                        {"base_channels", cfg.discriminator.base_channels},
                        {"init_std", cfg.discriminator.init_std}};
  return j;
}

inline ExperimentConfig experiment_config_from_json(const ordered_json& j) {
  ExperimentConfig cfg = profile_defaults(j.value("profile", std::string("desk")));
  if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
  if (j.contains("master_seed")) cfg.master_seed = j.at("master_seed").get<std::uint64_t>();
  if (j.contains("k_folds")) cfg.k_folds = j.at("k_folds").get<int>();
  if (j.contains("repeats")) cfg.repeats = j.at("repeats").get<int>();
  if (j.contains("weights")) cfg.weights = j.at("weights").get<std::vector<double>>();
  if (j.contains("modes")) {
    cfg.modes.clear();
    for (const auto& m : j.at("modes")) cfg.modes.push_back(cycle_mode_from_string(m.get<std::string>()));
  }
  if (j.contains("cohort")) {
    // overlay on profile defaults
    auto merged = to_json(cfg.cohort);
    merged.update(j.at("cohort"));
    cfg.cohort = cohort_config_from_json(merged);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    if (t.contains("epochs")) cfg.train.epochs = t.at("epochs").get<int>();
    if (t.contains("batch_size")) cfg.train.batch_size = t.at("batch_size").get<int>();
    if (t.contains("learning_rate")) cfg.train.learning_rate = t.at("learning_rate").get<double>();
    if (t.contains("adam_beta1")) cfg.train.adam_beta1 = t.at("adam_beta1").get<double>();
    if (t.contains("adam_beta2")) cfg.train.adam_beta2 = t.at("adam_beta2").get<double>();
    if (t.contains("buffer_capacity")) cfg.train.buffer_capacity = t.at("buffer_capacity").get<int>();
    if (t.contains("augmentation")) cfg.train.augmentation = t.at("augmentation").get<bool>();
    if (t.contains("gan_weight")) cfg.train.loss.gan_weight = t.at("gan_weight").get<double>();
    if (t.contains("identity_weight"))
      cfg.train.loss.identity_weight = t.at("identity_weight").get<double>();
  }
  if (j.contains("generator")) {
    const auto& g = j.at("generator");
    if (g.contains("depth")) cfg.generator.depth = g.at("depth").get<int>();
    if (g.contains("base_channels")) cfg.generator.base_channels = g.at("base_channels").get<int>();
    if (g.contains("norm"))
      cfg.generator.norm =
          g.at("norm").get<std::string>() == "instance" ? Norm::INSTANCE : Norm::NONE;
    if (g.contains("init_std")) cfg.generator.init_std = g.at("init_std").get<double>();
  }
  if (j.contains("discriminator")) {
    const auto& d = j.at("discriminator");
    if (d.contains("n_layers")) cfg.discriminator.n_layers = d.at("n_layers").get<int>();
    if (d.contains("base_channels"))
      cfg.discriminator.base_channels = d.at("base_channels").get<int>();
    if (d.contains("init_std")) cfg.discriminator.init_std = d.at("init_std").get<double>();
  }
  return cfg;
}

/// Hash of the experiment identity: everything except the output location.
inline std::uint64_t experiment_config_hash(const ExperimentConfig& cfg) {
  auto j = to_json(cfg);
  j.erase("output_dir");
  return fnv1a64(j.dump());
}

/// ASYMCYCLE_OUTPUT_ROOT reroots relative output directories.
inline std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg) {
  const char* root = std::getenv("ASYMCYCLE_OUTPUT_ROOT");
  if (root != nullptr && *root != '\0' && cfg.output_dir.is_relative())
    return std::filesystem::path(root) / cfg.output_dir;
  return cfg.output_dir;
}

// ---------------------------------------------------------------------------
// Layout & seed chain
// ---------------------------------------------------------------------------

struct RunCell {
  CycleMode mode = CycleMode::SYMMETRIC;
  double w_c = 1.0;
  int fold = 0;
  int repeat = 0;
};

inline std::vector<RunCell> enumerate_cells(const ExperimentConfig& cfg) {
  std::vector<RunCell> cells;
  for (auto mode : cfg.modes)
    for (double w : cfg.weights)
      for (int f = 0; f < cfg.k_folds; ++f)
        for (int r = 0; r < cfg.repeats; ++r) cells.push_back({mode, w, f, r});
  return cells;
}

inline std::string cell_group_name(CycleMode mode, double w_c) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_w%g", to_string(mode), w_c);
  return buf;
}

inline std::filesystem::path run_dir_for(const std::filesystem::path& root, const RunCell& cell) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "fold%d_rep%d", cell.fold, cell.repeat);
  return root / "runs" / cell_group_name(cell.mode, cell.w_c) / buf;
}

inline std::uint64_t weight_token(double w_c) {
  return static_cast<std::uint64_t>(std::llround(w_c * 1000.0));
}

/// Seeds are derived from the master seed and the (weight, fold, repeat)
/// coordinates only. The cycle mode is deliberately absent so the symmetric
/// and asymmetric arms of each cell start from identical initializations and
/// see identical data streams: the modes differ in the cycle term alone.
inline std::uint64_t train_seed_for(const ExperimentConfig& cfg, const RunCell& c) {
  return derive_seed(cfg.master_seed, "train", weight_token(c.w_c), c.fold, c.repeat);
}
inline ModelSeeds model_seeds_for(const ExperimentConfig& cfg, const RunCell& c) {
  ModelSeeds s;
  s.to_healthy = derive_seed(cfg.master_seed, "model_to_healthy", weight_token(c.w_c), c.fold, c.repeat);
  s.to_pathological =
      derive_seed(cfg.master_seed, "model_to_pathological", weight_token(c.w_c), c.fold, c.repeat);
  s.disc_pathological =
      derive_seed(cfg.master_seed, "model_disc_path", weight_token(c.w_c), c.fold, c.repeat);
  s.disc_healthy =
      derive_seed(cfg.master_seed, "model_disc_heal", weight_token(c.w_c), c.fold, c.repeat);
  return s;
}

// ---------------------------------------------------------------------------
// Small parallel-for used for independent grid cells
// ---------------------------------------------------------------------------

inline void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  jobs = std::max(1, jobs);
  if (jobs == 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex err_mutex;
  std::vector<std::string> errors;
  std::vector<std::thread> threads;
  for (int t = 0; t < std::min(jobs, n); ++t)
    threads.emplace_back([&] {
      while (true) {
        const int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lock(err_mutex);
          errors.emplace_back(e.what());
        }
      }
    });
  for (auto& t : threads) t.join();
  if (!errors.empty()) {
    std::string msg = "parallel task failures:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw std::runtime_error(msg);
  }
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

inline void write_experiment_echo(const ExperimentConfig& cfg, const std::filesystem::path& root) {
  ordered_json j = to_json(cfg);
  j["config_hash"] = experiment_config_hash(cfg);
  std::filesystem::create_directories(root);
  std::ofstream f(root / "experiment.json");
  f << j.dump(2) << "\n";
  if (!f) throw std::runtime_error("cannot write experiment.json");
}

inline void check_experiment_echo(const ExperimentConfig& cfg, const std::filesystem::path& root) {
  const auto path = root / "experiment.json";
  std::ifstream f(path);
  if (!f) throw Refused("no experiment.json at " + root.string() + " (run gen-data first)");
  const auto j = ordered_json::parse(f);
  const auto stored = j.at("config_hash").get<std::uint64_t>();
  if (stored != experiment_config_hash(cfg))
    throw Refused("experiment config hash mismatch against prior state in " + root.string());
}

/// Generates and persists the cohort, fold plan and config echo. Refuses to
/// touch an existing cohort unless overwrite is set; rewriting with the same
/// config and seed is byte-identical.
inline std::filesystem::path cmd_gen_data(const ExperimentConfig& cfg, bool overwrite) {
  cfg.validate();
  const auto root = resolve_output_dir(cfg);
  const auto cohort_dir = root / "cohort";
  if (std::filesystem::exists(cohort_dir / "manifest.json") && !overwrite)
    throw Refused("cohort already exists at " + cohort_dir.string() + " (use --overwrite)");

  CohortConfig cc = cfg.cohort;
  cc.seed = derive_seed(cfg.master_seed, "cohort");
  Cohort cohort = generate_cohort(cc);
  const FoldPlan folds =
      make_folds(cohort.patients, cfg.k_folds, derive_seed(cfg.master_seed, "folds"));
  save_cohort(cohort, folds, cohort_dir);
  write_experiment_echo(cfg, root);
  return cohort_dir;
}

// ---------------------------------------------------------------------------
// run-grid
// ---------------------------------------------------------------------------

enum class RunStatus { TRAINED, SKIPPED, DIVERGED };

struct GridSummary {
  int trained = 0;
  int skipped = 0;
  int diverged = 0;
};

namespace detail {

inline void write_run_config(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                             const RunCell& cell, std::uint64_t cohort_hash) {
  ordered_json j;
  j["experiment_hash"] = experiment_config_hash(cfg);
  j["cohort_hash"] = cohort_hash;
  j["mode"] = to_string(cell.mode);
  j["w_c"] = cell.w_c;
  j["fold"] = cell.fold;
  j["repeat"] = cell.repeat;
  j["train_seed"] = train_seed_for(cfg, cell);
  const auto seeds = model_seeds_for(cfg, cell);
  j["model_seeds"] = {{"to_healthy", seeds.to_healthy},
                      {"to_pathological", seeds.to_pathological},
                      {"disc_pathological", seeds.disc_pathological},
                      {"disc_healthy", seeds.disc_healthy}};
  j["epochs"] = cfg.train.epochs;
  std::ofstream f(dir / "config.json");
  f << j.dump(2) << "\n";
}

}  // namespace detail

/// Trains one grid cell, resuming from the newest epoch checkpoint if one is
/// present. A completed cell (DONE marker + final model) is skipped.
inline RunStatus run_one_cell(const ExperimentConfig& cfg, const LoadedCohort& data,
                              const RunCell& cell, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  const fs::path dir = run_dir_for(root, cell);
  if (fs::exists(dir / "DONE") && fs::exists(dir / "model.bin")) return RunStatus::SKIPPED;
  fs::create_directories(dir);
  detail::write_run_config(dir, cfg, cell, data.manifest_hash);

  TrainConfig tc = cfg.train;
  tc.loss.cycle_mode = cell.mode;
  tc.loss.w_c = cell.w_c;
  tc.seed = train_seed_for(cfg, cell);
  const ModelSeeds seeds = model_seeds_for(cfg, cell);

  ModelBundle<float> bundle =
      build_bundle<float>(cfg.generator, cfg.discriminator, seeds.to_healthy, seeds.to_pathological,
                          seeds.disc_pathological, seeds.disc_healthy);
  bundle.fingerprint.cohort_hash = data.manifest_hash;
  bundle.fingerprint.config_hash = experiment_config_hash(cfg);
  bundle.fingerprint.train_seed = tc.seed;
  bundle.fingerprint.held_out_fold = cell.fold;

  auto set = training_domains<float>(data.cohort, data.folds, cell.fold);
  UnpairedLoader<float> loader(std::move(set.x_images), std::move(set.y_images), tc.augmentation,
                               tc.batch_size, tc.seed);
  CycleTrainer<float> trainer(bundle, std::move(loader), tc);

  const fs::path state_path = dir / "state.bin";
  if (fs::exists(state_path)) trainer.load_state(state_path);

  try {
    trainer.run([&](CycleTrainer<float>& t, int /*epoch*/) {
      const fs::path tmp = dir / "state.bin.tmp";
      t.save_state(tmp);
      fs::rename(tmp, state_path);
      write_loss_log(dir / "loss_log.txt", t.trajectory());
      return true;
    });
  } catch (const TrainingDiverged& e) {
    std::ofstream f(dir / "FAILED");
    f << e.what() << "\n";
    write_loss_log(dir / "loss_log.txt", trainer.trajectory());
    return RunStatus::DIVERGED;
  }

  save_bundle(bundle, dir / "model.bin");
  write_loss_log(dir / "loss_log.txt", trainer.trajectory());
  {
    std::ofstream f(dir / "DONE");
    f << "ok\n";
  }
  fs::remove(state_path);
  return RunStatus::TRAINED;
}

inline GridSummary cmd_run_grid(const ExperimentConfig& cfg, int jobs) {
  cfg.validate();
  const auto root = resolve_output_dir(cfg);
  check_experiment_echo(cfg, root);
  const LoadedCohort data = load_cohort(root / "cohort");

  const auto cells = enumerate_cells(cfg);
  std::vector<RunStatus> statuses(cells.size());
  parallel_for(static_cast<int>(cells.size()), jobs,
               [&](int i) { statuses[i] = run_one_cell(cfg, data, cells[i], root); });

  GridSummary summary;
  for (auto s : statuses) {
    if (s == RunStatus::TRAINED) ++summary.trained;
    if (s == RunStatus::SKIPPED) ++summary.skipped;
    if (s == RunStatus::DIVERGED) ++summary.diverged;
  }
  return summary;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvalSummary {
  int evaluated = 0;
  int skipped = 0;
  int missing = 0;  // cells without a trained model
};

inline EvalSummary cmd_evaluate(const ExperimentConfig& cfg, int jobs, int levels = 256) {
  cfg.validate();
  const auto root = resolve_output_dir(cfg);
  check_experiment_echo(cfg, root);
  const LoadedCohort data = load_cohort(root / "cohort");

  const auto cells = enumerate_cells(cfg);
  std::vector<int> status(cells.size(), 0);
  parallel_for(static_cast<int>(cells.size()), jobs, [&](int i) {
    const auto& cell = cells[i];
    const auto dir = run_dir_for(root, cell);
    if (std::filesystem::exists(dir / "eval.csv")) {
      status[i] = 1;
      return;
    }
    if (!std::filesystem::exists(dir / "model.bin")) {
      status[i] = 2;
      return;
    }
    auto bundle = load_bundle<float>(dir / "model.bin");
    const auto evals = pseudo_healthy_eval(bundle, data.cohort, data.folds, data.manifest_hash, levels);
    std::vector<EvalRow> rows;
    rows.reserve(evals.size());
    for (const auto& e : evals) {
      EvalRow r;
      r.patient_id = e.patient_id;
      r.slice_index = e.slice_index;
      r.method = to_string(cell.mode);
      r.w_c = cell.w_c;
      r.fold = cell.fold;
      r.repeat = cell.repeat;
      r.source = e.source;
      r.t_low = e.t_low;
      r.t_high = e.t_high;
      r.dsc = e.dsc;
      r.marker = e.marker;
      rows.push_back(std::move(r));
    }
    write_eval_csv(dir / "eval.csv", rows);
    status[i] = 0;
  });

  EvalSummary summary;
  for (int s : status) {
    if (s == 0) ++summary.evaluated;
    if (s == 1) ++summary.skipped;
    if (s == 2) ++summary.missing;
  }
  return summary;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportOutput {
  ReportTable table;
  std::filesystem::path report_dir;
};

inline ReportOutput cmd_report(const ExperimentConfig& cfg) {
  cfg.validate();
  namespace fs = std::filesystem;
  const auto root = resolve_output_dir(cfg);
  check_experiment_echo(cfg, root);
  const LoadedCohort data = load_cohort(root / "cohort");
  const fs::path report_dir = root / "report";
  fs::create_directories(report_dir);

  std::vector<EvalRow> rows;
  for (const auto& cell : enumerate_cells(cfg)) {
    const auto path = run_dir_for(root, cell) / "eval.csv";
    if (!fs::exists(path)) continue;  // aggregate_and_report reports the gap
    for (auto& r : read_eval_csv(path)) rows.push_back(std::move(r));
  }

  std::vector<std::string> methods;
  for (auto m : cfg.modes) methods.push_back(to_string(m));

  ReportOutput out;
  out.report_dir = report_dir;
  try {
    out.table = aggregate_and_report(rows, data.cohort.patients, data.folds, cfg.weights, methods,
                                     cfg.k_folds, cfg.repeats);
  } catch (const IncompleteGrid& e) {
    std::ofstream f(report_dir / "completeness.txt");
    f << e.what() << "\n";
    throw;
  }

  {
    std::ofstream f(report_dir / "report.json");
    f << report_to_json(out.table).dump(2) << "\n";
  }
  {
    std::ofstream f(report_dir / "report.txt");
    f << render_report_text(out.table, /*color=*/true);
  }

  // qualitative grids: a fixed set of exemplar severe slices per method cell
  std::vector<const Slice*> exemplars;
  {
    std::vector<std::string> severe_ids;
    for (const auto& p : data.cohort.patients)
      if (p.severity == Severity::SEVERE) severe_ids.push_back(p.id);
    std::sort(severe_ids.begin(), severe_ids.end());
    if (severe_ids.size() > 4) severe_ids.resize(4);
    const int mid = cfg.cohort.slices_per_patient / 2;
    for (const auto& pid : severe_ids)
      for (const auto& s : data.cohort.slices)
        if (s.patient_id == pid && s.slice_index == mid && s.domain == Domain::PATHOLOGICAL &&
            !s.oracle_twin)
          exemplars.push_back(&s);
  }
  for (auto mode : cfg.modes)
    for (double w : cfg.weights) {
      std::vector<SamplePane> panes;
      for (const Slice* s : exemplars) {
        const RunCell cell{mode, w, data.folds.assignment.at(s->patient_id), 0};
        const auto model_path = run_dir_for(root, cell) / "model.bin";
        if (!fs::exists(model_path)) continue;
        const auto bundle = load_bundle<float>(model_path);
        SamplePane pane;
        pane.original = s->pixels;
        pane.translated = heal_image(bundle, s->pixels);
        pane.gt_mask = s->gt_mask;
        const auto thr = optimal_two_threshold(pane.translated, s->gt_mask, 256);
        pane.t_low = thr.t_low;
        pane.t_high = thr.t_high;
        panes.push_back(std::move(pane));
      }
      if (!panes.empty())
        write_sample_grid_ppm(report_dir / ("samples_" + cell_group_name(mode, w) + ".ppm"), panes);
    }

  return out;
}

}  // namespace asymcycle
