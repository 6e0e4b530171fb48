// Command-line driver: data generation, training grids, evaluation and
// report emission for the asymmetric cycle-consistency experiments.
//
// Exit codes: 0 success, 1 usage/internal error, 2 refused (existing outputs,
// config mismatch, incomplete grid), 3 at least one training run diverged.

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "asymcycle/asymcycle.hpp"

namespace {

using namespace asymcycle;

struct CommonOpts {
  std::string config_path;
  std::string profile = "desk";
  bool profile_set = false;
  bool seed_set = false;
  std::uint64_t seed = 0;
  int jobs = 1;
  bool overwrite = false;
};

ExperimentConfig load_config(const CommonOpts& opts) {
  ExperimentConfig cfg;
  if (!opts.config_path.empty()) {
    std::ifstream f(opts.config_path);
    if (!f) throw std::runtime_error("cannot read config file: " + opts.config_path);
    auto j = ordered_json::parse(f);
    if (opts.profile_set) j["profile"] = opts.profile;
    cfg = experiment_config_from_json(j);
  } else {
    cfg = profile_defaults(opts.profile);
  }
  if (opts.seed_set) cfg.master_seed = opts.seed;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "Experiment config file (JSON)");
  cmd->add_option("--profile", opts.profile, "Config profile: desk|paper")
      ->check(CLI::IsMember({"desk", "paper"}))
      ->each([&](const std::string&) { opts.profile_set = true; });
  cmd->add_option("--seed", opts.seed, "Master seed override")
      ->each([&](const std::string&) { opts.seed_set = true; });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Asymmetric cycle-consistency translation workbench"};
  app.require_subcommand(1);

  CommonOpts gen_opts, run_opts, eval_opts, report_opts;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic cohort and fold plan");
  add_common(gen, gen_opts);
  gen->add_flag("--overwrite", gen_opts.overwrite, "Replace an existing cohort");

  auto* run = app.add_subcommand("run-grid", "Train every (mode, weight, fold, repeat) cell");
  add_common(run, run_opts);
  run->add_option("--jobs", run_opts.jobs, "Parallel training runs")->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("evaluate", "Threshold-oracle evaluation of completed runs");
  add_common(eval, eval_opts);
  eval->add_option("--jobs", eval_opts.jobs, "Parallel evaluations")->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "Aggregate results into the comparison table");
  add_common(report, report_opts);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const auto cfg = load_config(gen_opts);
      const auto dir = cmd_gen_data(cfg, gen_opts.overwrite);
      std::printf("cohort written to %s\n", dir.string().c_str());
    } else if (run->parsed()) {
      const auto cfg = load_config(run_opts);
      const auto summary = cmd_run_grid(cfg, run_opts.jobs);
      std::printf("run-grid: %d trained, %d skipped, %d diverged\n", summary.trained,
                  summary.skipped, summary.diverged);
      if (summary.diverged > 0) return 3;
    } else if (eval->parsed()) {
      const auto cfg = load_config(eval_opts);
      const auto summary = cmd_evaluate(cfg, eval_opts.jobs);
      std::printf("evaluate: %d evaluated, %d skipped, %d missing\n", summary.evaluated,
                  summary.skipped, summary.missing);
      if (summary.missing > 0) return 2;
    } else if (report->parsed()) {
      const auto cfg = load_config(report_opts);
      const auto out = cmd_report(cfg);
      std::cout << render_report_text(out.table, /*color=*/true);
      std::printf("report written to %s\n", out.report_dir.string().c_str());
    }
  } catch (const Refused& e) {
    std::fprintf(stderr, "refused: %s\n", e.what());
    return 2;
  } catch (const IncompleteGrid& e) {
    std::fprintf(stderr, "incomplete grid:\n%s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
