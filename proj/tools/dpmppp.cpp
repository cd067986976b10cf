#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dpmppp/commands.hpp"

namespace {

using dpmppp::cli::Options;

void add_common(CLI::App* app, Options& o) {
  app->add_option("--config", o.config, "TOML or JSON run config");
  app->add_option("--out", o.out, "output directory")->capture_default_str();
  app->add_option("--seed", o.seed, "overrides every seed in the config");
  app->add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
}

void add_data(CLI::App* app, Options& o) {
  app->add_option("--events", o.events, "events CSV: subject_id,x1..xH,mark");
  app->add_option("--subjects", o.subjects, "subjects CSV: subject_id,offset_t[,true_label]");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dirichlet-process mixtures of marked Poisson point processes"};
  app.require_subcommand(1);
  Options o;

  auto* sim = app.add_subcommand("simulate", "simulate a dataset from a scenario config");
  add_common(sim, o);

  auto* fit = app.add_subcommand("fit", "variational fit of a dataset");
  add_common(fit, o);
  add_data(fit, o);
  fit->add_flag("--timing", o.timing, "print the runtime on stderr");

  auto* ev = app.add_subcommand("evaluate", "confusion, purity, baselines and surfaces of a fit");
  add_common(ev, o);
  add_data(ev, o);
  ev->add_option("--fit-dir", o.fit_dir, "directory written by fit")->required();
  ev->add_option("--grid-res", o.grid_res, "surface grid points per axis");
  ev->add_flag("--baselines,!--no-baselines", o.baselines, "also run binned and KDE k-means");
  ev->add_flag("--pgm", o.pgm, "write PGM heatmaps for 2D surfaces");

  auto* dg = app.add_subcommand("diagnose", "mode-finding theory checks");
  add_common(dg, o);

  auto* ex = app.add_subcommand("export", "basis evaluation grid as CSV");
  add_common(ex, o);
  add_data(ex, o);
  ex->add_option("--grid-res", o.grid_res, "grid points per axis");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*sim) return dpmppp::cli::cmd_simulate(o);
    if (*fit) return dpmppp::cli::cmd_fit(o);
    if (*ev) return dpmppp::cli::cmd_evaluate(o);
    if (*dg) return dpmppp::cli::cmd_diagnose(o);
    if (*ex) return dpmppp::cli::cmd_export(o);
  } catch (const dpmppp::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
