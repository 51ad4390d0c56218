// sublap command-line driver.
//
//   sublap run        --config cfg.json [--set key=value ...]
//   sublap train      --config cfg.json
//   sublap curvature  --config cfg.json
//   sublap project    --config cfg.json
//   sublap evaluate   --config cfg.json
//   sublap report     --dir results
//
// Exit status is 0 only when every (seed, method, s) cell succeeded.

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "sublap/sublap.hpp"

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "experiment config (JSON)");
  cmd->add_option("--set", c.overrides, "override a config key, e.g. train.epochs=200")
      ->take_all();
  cmd->add_flag("-q,--quiet", c.quiet, "suppress progress messages");
}

template <typename Fn>
int for_each_seed(const sublap::ExperimentConfig& cfg, sublap::RunLog& log, Fn&& fn) {
  int status = 0;
  for (std::int64_t seed : cfg.seeds) {
    try {
      if (!fn(seed)) status = 1;
    } catch (const std::exception& e) {
      log.error(cfg.dataset.display_name() + " seed " + std::to_string(seed) + ": " +
                e.what());
      status = 1;
    }
  }
  return status;
}

int print_report(const std::string& dir) {
  const sublap::ComparisonReport rep = sublap::compare_report(dir);
  std::cout << sublap::format_report(rep);
  sublap::write_ranking_csv((std::filesystem::path(dir) / "ranking.csv").string(), rep);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Linearized Laplace subspace models: train, project, evaluate"};
  app.require_subcommand(1);

  Common common;
  std::string report_dir = "results";

  auto* run = app.add_subcommand("run", "train, build curvature, evaluate all cells, report");
  auto* train = app.add_subcommand("train", "train (or reuse) the MAP network per seed");
  auto* curv = app.add_subcommand("curvature", "compute and cache the curvature factor");
  auto* project = app.add_subcommand("project", "build and save projector matrices");
  auto* evaluate = app.add_subcommand("evaluate", "compute metrics for every cell");
  auto* report = app.add_subcommand("report", "rank methods from metrics CSVs");
  for (auto* cmd : {run, train, curv, project, evaluate}) add_common(cmd, common);
  report->add_option("-d,--dir", report_dir, "result directory")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (report->parsed()) return print_report(report_dir);

    const sublap::ExperimentConfig cfg = sublap::load_config(common.config, common.overrides);
    sublap::RunLog log(common.quiet ? nullptr : &std::cerr);

    if (run->parsed() || evaluate->parsed()) {
      const sublap::RunSummary sum = sublap::run_experiment(cfg, log);
      std::cerr << "cells: " << sum.cells.ok << " ok, " << sum.cells.skipped
                << " skipped, " << sum.cells.failed << " failed";
      if (auto sc = sum.agreement.score()) std::cerr << "; ordering agreement " << *sc;
      std::cerr << '\n';
      if (run->parsed()) print_report(sublap::dataset_dir(cfg));
      return sum.all_succeeded() ? 0 : 1;
    }
    if (train->parsed()) {
      return for_each_seed(cfg, log, [&](std::int64_t seed) {
        sublap::prepare_seed(cfg, seed, log);
        return true;
      });
    }
    if (curv->parsed()) {
      return for_each_seed(cfg, log, [&](std::int64_t seed) {
        sublap::SeedArtifacts art = sublap::prepare_seed(cfg, seed, log, false);
        const auto& f = sublap::ensure_factor(cfg, art, log);
        log.info(cfg.dataset.display_name() + " seed " + std::to_string(seed) +
                 ": curvature factor " + std::to_string(f.V.rows()) + " x " +
                 std::to_string(f.V.cols()));
        return true;
      });
    }
    if (project->parsed()) {
      return for_each_seed(cfg, log, [&](std::int64_t seed) {
        sublap::SeedArtifacts art = sublap::prepare_seed(cfg, seed, log, false);
        const sublap::CellOutcome out = sublap::project_seed(cfg, art, log);
        return out.failed == 0;
      });
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
