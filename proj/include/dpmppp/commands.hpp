#pragma once

// The five batch commands behind the dpmppp tool. Each is a pure function
// of (config, input files, seed) and writes into an output directory.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dpmppp/diagnostics.hpp"
#include "dpmppp/evaluate.hpp"
#include "dpmppp/inference.hpp"
#include "dpmppp/io.hpp"
#include "dpmppp/scenarios.hpp"

namespace dpmppp::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct Options {
  std::optional<fs::path> config;
  std::optional<fs::path> events;
  std::optional<fs::path> subjects;
  std::optional<fs::path> fit_dir;
  fs::path out = ".";
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::optional<bool> baselines;
  std::optional<int> grid_res;
  bool pgm = false;
  bool timing = false;
};

/// Top-level sections accepted in a run config.
inline json read_run_config(const Options& o) {
  json cfg = o.config ? io::load_config(*o.config) : json::object();
  if (!cfg.is_object()) throw ConfigError("config: top level must be a table");
  static const std::vector<std::string> known{"seed", "scenario", "model", "basis", "evaluate", "diagnose"};
  for (const auto& [k, v] : cfg.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw ConfigError("config: unknown section '" + k + "'");
  return cfg;
}

/// --seed, then the section's own seed, then the top-level seed.
inline json section_with_seed(const json& cfg, const std::string& name, const Options& o) {
  json s = cfg.contains(name) ? cfg[name] : json::object();
  if (!s.is_object()) throw ConfigError("[" + name + "] must be a table");
  if (o.seed)
    s["seed"] = *o.seed;
  else if (!s.contains("seed") && cfg.contains("seed"))
    s["seed"] = cfg["seed"];
  return s;
}

inline void prepare_out(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create output directory " + dir.string());
}

inline const fs::path& need(const std::optional<fs::path>& p, const std::string& flag) {
  if (!p) throw ConfigError("missing required flag " + flag);
  return *p;
}

// ---------------------------------------------------------------------------

inline int cmd_simulate(const Options& o) {
  const json cfg = read_run_config(o);
  if (!cfg.contains("scenario")) throw ConfigError("simulate: config has no [scenario] section");
  const ScenarioConfig sc = io::scenario_from_json(section_with_seed(cfg, "scenario", o));
  const Dataset data = simulate(sc, o.jobs);
  prepare_out(o.out);
  io::write_dataset(data, o.out / "events.csv", o.out / "subjects.csv");
  io::write_json(o.out / "scenario.json", {{"scenario", io::scenario_to_json(sc)}});
  return 0;
}

// ---------------------------------------------------------------------------

struct FitInputs {
  Dataset data;
  ModelConfig model;
  BasisConfig basis;
};

inline FitInputs load_fit_inputs(const Options& o, const json& cfg) {
  FitInputs in;
  const io::BasisSpec bs = io::basis_spec_from_json(cfg.contains("basis") ? cfg["basis"] : json());
  in.basis = bs.basis;
  in.data = io::read_dataset(need(o.events, "--events"), need(o.subjects, "--subjects"), bs.domain);
  json model = section_with_seed(cfg, "model", o);
  model["jobs"] = o.jobs;
  in.model = io::model_config_from_json(model);
  return in;
}

inline int cmd_fit(const Options& o) {
  const json cfg = read_run_config(o);
  const FitInputs in = load_fit_inputs(o, cfg);
  const FitResult r = fit(in.data, in.basis, in.model);
  prepare_out(o.out);
  io::write_labels(o.out / "labels.csv", in.data, r);
  io::write_elbo_trace(o.out / "elbo_trace.csv", r.elbo_trace);
  for (const int k : r.active_clusters)
    for (int m = 0; m < 2; ++m)
      io::write_theta(o.out / io::theta_file_name(k, m), r.state.mu_theta[k][m], r.state.sigma_theta[k][m]);
  io::write_json(o.out / "summary.json", io::fit_summary(in.data, r, in.model, in.basis));
  if (o.timing) std::cerr << "fit runtime_s " << r.runtime_s << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct EvaluateConfig {
  int grid_res = 50;
  bool baselines = false;
  int baseline_grid = 10;
  /// <= 0: per-sample Silverman rule.
  double kde_bandwidth = 0.0;
  std::uint64_t seed = 0;
};

inline EvaluateConfig evaluate_config_from_json(const json& j) {
  EvaluateConfig c;
  io::Section s(j, "evaluate");
  s.get("grid_res", c.grid_res);
  s.get("baselines", c.baselines);
  s.get("baseline_grid", c.baseline_grid);
  s.get("kde_bandwidth", c.kde_bandwidth);
  s.get("seed", c.seed);
  s.finish();
  if (c.grid_res < 2) throw ConfigError("[evaluate] grid_res must be >= 2");
  if (c.baseline_grid < 1) throw ConfigError("[evaluate] baseline_grid must be >= 1");
  return c;
}

/// Confusion table with the matched true label of each estimated column in
/// the last row ("satellite" when unmatched).
inline void write_confusion(const fs::path& path, const ConfusionMatrix& cm, const LabelMatching& mt) {
  io::CsvWriter w(path);
  std::vector<std::string> head{"true_label"};
  for (const int c : cm.col_labels) head.push_back("est_" + std::to_string(c));
  w.row(head);
  for (Eigen::Index r = 0; r < cm.counts.rows(); ++r) {
    std::vector<std::string> f{std::to_string(cm.row_labels[static_cast<std::size_t>(r)])};
    for (Eigen::Index c = 0; c < cm.counts.cols(); ++c) f.push_back(std::to_string(cm.counts(r, c)));
    w.row(f);
  }
  std::vector<std::string> last{"matched_true"};
  for (std::size_t c = 0; c < cm.col_labels.size(); ++c) {
    const int r = mt.row_of_col[c];
    last.push_back(r < 0 ? std::string("satellite") : std::to_string(cm.row_labels[static_cast<std::size_t>(r)]));
  }
  w.row(last);
}

inline json label_sizes(const std::vector<int>& labels) {
  std::map<int, int> count;
  for (const int l : labels) ++count[l];
  json j = json::object();
  for (const auto& [l, c] : count) j[std::to_string(l)] = c;
  return j;
}

inline int cmd_evaluate(const Options& o) {
  const json cfg = read_run_config(o);
  EvaluateConfig ec = evaluate_config_from_json(section_with_seed(cfg, "evaluate", o));
  if (o.grid_res) ec.grid_res = *o.grid_res;
  if (o.baselines) ec.baselines = *o.baselines;
  if (ec.grid_res < 2) throw ConfigError("--grid-res must be >= 2");
  const fs::path& fit_dir = need(o.fit_dir, "--fit-dir");
  const json summary = io::read_json(fit_dir / "summary.json");
  const io::LabelsFile lab = io::read_labels(fit_dir / "labels.csv");
  const io::SubjectTable subj = io::read_subjects(need(o.subjects, "--subjects"));

  std::map<std::string, int> est_of;
  for (std::size_t i = 0; i < lab.subject_ids.size(); ++i) est_of[lab.subject_ids[i]] = lab.labels[i];
  if (est_of.size() != subj.ids.size())
    throw DataError("evaluate: labels.csv and the subjects CSV list different subjects");
  std::vector<int> est;
  for (const auto& id : subj.ids) {
    const auto it = est_of.find(id);
    if (it == est_of.end()) throw DataError("evaluate: subject '" + id + "' missing from labels.csv");
    est.push_back(it->second);
  }

  json metrics;
  metrics["n_subjects"] = subj.ids.size();
  metrics["cluster_sizes"] = label_sizes(est);
  prepare_out(o.out);
  if (subj.labels) {
    const std::vector<int>& truth = *subj.labels;
    const ConfusionMatrix cm = confusion_matrix(truth, est);
    const LabelMatching mt = match_labels(cm);
    write_confusion(o.out / "confusion.csv", cm, mt);
    metrics["true_sizes"] = label_sizes(truth);
    metrics["purity"] = purity(truth, est);
    metrics["matched_trace"] = mt.matched_trace;
    const std::vector<double> recall = matched_recall(cm, mt);
    json rec = json::object();
    for (std::size_t r = 0; r < recall.size(); ++r) rec[std::to_string(cm.row_labels[r])] = recall[r];
    metrics["matched_recall"] = rec;
    json sat = json::array();
    for (const int c : mt.unmatched_cols())
      sat.push_back({{"cluster", cm.col_labels[static_cast<std::size_t>(c)]},
                     {"size", cm.counts.col(c).sum()}});
    metrics["satellites"] = sat;
    json pur{{"proposed", metrics["purity"]}};
    if (ec.baselines) {
      const Dataset data = io::read_dataset(need(o.events, "--events"), *o.subjects,
                                            io::domain_from_json(summary["config"]["basis"]["domain"], "summary.json"));
      const int k = static_cast<int>(cm.row_labels.size());
      const BaselineLabels b = run_baselines(data, k, ec.seed, ec.baseline_grid, ec.kde_bandwidth);
      pur["binned_kmeans"] = purity(truth, b.binned);
      pur["kde_kmeans"] = purity(truth, b.kde);
    }
    metrics["purities"] = pur;
  } else {
    std::cerr << "evaluate: no true_label column; skipping purity and confusion\n";
    if (ec.baselines) std::cerr << "evaluate: baselines need true labels; skipped\n";
  }

  // Plug-in surfaces of every active cluster.
  const json& bj = summary["config"]["basis"];
  const Domain domain = io::domain_from_json(bj["domain"], "summary.json");
  const TensorBasis basis = TensorBasis::uniform(bj["degree"].get<int>(), bj["n_interior"].get<int>(), domain);
  json files = json::array();
  for (const auto& a : summary["active_clusters"]) {
    const int k = a["cluster"].get<int>();
    std::array<Eigen::VectorXd, 2> theta;
    for (int m = 0; m < 2; ++m) theta[m] = io::read_theta(fit_dir / io::theta_file_name(k, m)).first;
    for (const SurfaceKind kind : {SurfaceKind::total, SurfaceKind::mark0, SurfaceKind::mark1, SurfaceKind::prob}) {
      const SurfaceGrid g = surface_grid(theta, basis, ec.grid_res, kind);
      const std::string stem = "cluster_" + std::to_string(k) + "_" + to_string(kind);
      io::write_grid_csv(o.out / (stem + ".csv"), g);
      files.push_back(stem + ".csv");
      if (o.pgm && g.dims() == 2) io::write_pgm(o.out / (stem + ".pgm"), g);
    }
  }
  metrics["surfaces"] = files;
  metrics["grid_res"] = ec.grid_res;
  io::write_json(o.out / "metrics.json", metrics);
  return 0;
}

// ---------------------------------------------------------------------------

struct CheckOutcome {
  bool passed = false;
  json detail = json::object();
};

inline int required_count(int reps, double fraction) {
  return static_cast<int>(std::ceil(fraction * reps - 1e-9));
}

/// Runs fn, turning library errors into a failed check with the message.
template <class Fn>
CheckOutcome guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    CheckOutcome c;
    c.detail["error"] = e.what();
    return c;
  }
}

inline int cmd_diagnose(const Options& o) {
  const json cfg = read_run_config(o);
  const io::DiagnoseConfig dc = io::diagnose_config_from_json(section_with_seed(cfg, "diagnose", o));
  prepare_out(o.out);
  json verdict = json::object();
  bool all = true;
  auto record = [&](const std::string& name, const CheckOutcome& c) {
    json v = c.detail;
    v["passed"] = c.passed;
    verdict[name] = v;
    all = all && c.passed;
  };

  record("mode_consistency", guarded([&] {
    const TrendResult t = mode_consistency_trend(dc.trend, dc.trend_reps, dc.seed, dc.trend_inner, o.jobs);
    io::CsvWriter w(o.out / "mode_consistency.csv");
    w.row({"rep", "exposure", "error"});
    for (std::size_t r = 0; r < t.errors.size(); ++r)
      for (std::size_t l = 0; l < t.exposures.size(); ++l)
        w.row({std::to_string(r), io::fmt(t.exposures[l]), io::fmt(t.errors[r][l])});
    CheckOutcome c;
    const int need_reps = required_count(dc.trend_reps, 0.9);
    c.passed = t.reps_decreasing() >= need_reps;
    c.detail = json{{"reps_decreasing", t.reps_decreasing()}, {"reps", dc.trend_reps}, {"required", need_reps},
                {"mean_error", t.mean_error()}};
    return c;
  }));

  record("chamber_gap", guarded([&] {
    const GapResult g = chamber_gap_check(dc.chamber, dc.gap_exposure, dc.gap_reps, dc.seed, dc.gap_grid, o.jobs);
    io::CsvWriter w(o.out / "chamber_gap.csv");
    w.row({"rep", "sup_sign_changing", "sup_positive", "sup_negative", "argmax_distance", "gap"});
    for (std::size_t r = 0; r < g.reps.size(); ++r) {
      const GapRep& x = g.reps[r];
      w.row({std::to_string(r), io::fmt(x.sup_sign_changing), io::fmt(x.sup_positive), io::fmt(x.sup_negative),
             io::fmt(x.argmax_distance), x.gap ? "1" : "0"});
    }
    CheckOutcome c;
    const int need_reps = required_count(dc.gap_reps, 0.95);
    c.passed = g.gap_count() >= need_reps;
    c.detail = json{{"gap_count", g.gap_count()}, {"reps", dc.gap_reps}, {"required", need_reps},
                {"frequency", g.frequency()}, {"grid_step", g.grid_step}};
    return c;
  }));

  record("dominance", guarded([&] {
    TheoryScenario scn = dc.chamber;
    scn.exposure_ladder = dc.dominance_ladder;
    scn.validate();
    const DominanceResult d = dominance_ratio(scn, dc.dominance_reps, dc.seed, dc.dominance_grid, o.jobs);
    io::CsvWriter w(o.out / "dominance.csv");
    w.row({"rep", "exposure", "log_z_positive", "log_z_negative", "log_z_sign_changing", "log_ratio"});
    double scale = 1.0;
    for (std::size_t r = 0; r < d.reps.size(); ++r)
      for (std::size_t l = 0; l < d.exposures.size(); ++l) {
        const DominanceRep& x = d.reps[r];
        scale = std::max(scale, std::abs(x.log_z_positive[l]));
        w.row({std::to_string(r), io::fmt(d.exposures[l]), io::fmt(x.log_z_positive[l]),
               io::fmt(x.log_z_negative[l]), io::fmt(x.log_z_sign_changing[l]), io::fmt(x.log_ratio[l])});
      }
    CheckOutcome c;
    const int need_reps = required_count(dc.dominance_reps, 0.9);
    const double sym_tol = 1e-9 * scale;
    c.passed = d.reps_decreasing() >= need_reps && d.max_symmetry_gap() <= sym_tol;
    c.detail = json{{"reps_decreasing", d.reps_decreasing()}, {"reps", dc.dominance_reps}, {"required", need_reps},
                {"max_symmetry_gap", d.max_symmetry_gap()}, {"symmetry_tolerance", sym_tol}};
    return c;
  }));

  record("truncated_log", guarded([&] {
    const TruncationCheck t = truncated_log_check(dc.chamber, dc.gap_exposure, 200, dc.seed);
    io::CsvWriter w(o.out / "truncated_log.csv");
    w.row({"points", "mismatches", "l_tr"});
    w.row({std::to_string(t.points), std::to_string(t.mismatches), io::fmt(t.l_tr)});
    CheckOutcome c;
    c.passed = t.points > 0 && t.mismatches == 0;
    c.detail = json{{"points", t.points}, {"mismatches", t.mismatches}};
    return c;
  }));

  record("concavity", guarded([&] {
    // A block of events drawn from the trend scenario, weighted by concavity_a.
    const TheoryProblem p(dc.trend);
    Rng rng = derive_stream(dc.seed, 0xc0c, 0);
    const EmpiricalBlock e = p.empirical(std::max(dc.concavity_a, 1.0), rng);
    ThetaBlockContext ctx = make_block_context(dc.concavity_a, dc.trend.eta, p.mass, p.omega);
    ctx.events = {WeightedRows{1.0, &e.sparse}};
    io::CsvWriter w(o.out / "concavity.csv");
    w.row({"probes", "max_lambda", "bound", "strong_pairs", "worst_pair_violation"});
    const ConcavityReport rep = concavity_probe(ctx, p.mass, dc.concavity_probes, rng, dc.trend.delta);
    const double worst = strong_concavity_pairs(ctx, p.mass, dc.concavity_pairs, rng, dc.trend.delta);
    w.row({std::to_string(rep.probes), io::fmt(rep.max_lambda), io::fmt(rep.bound),
           std::to_string(dc.concavity_pairs), io::fmt(worst)});
    CheckOutcome c;
    c.passed = worst <= 1e-10;
    c.detail = json{{"probes", rep.probes}, {"max_lambda", rep.max_lambda}, {"bound", rep.bound},
                {"worst_pair_violation", worst}};
    return c;
  }));

  verdict["all_passed"] = all;
  verdict["seed"] = dc.seed;
  io::write_json(o.out / "verdict.json", verdict);
  if (!all) {
    for (const auto& [k, v] : verdict.items())
      if (v.is_object() && !v["passed"].get<bool>())
        std::cerr << "diagnose: " << k << " failed"
                  << (v.contains("error") ? ": " + v["error"].get<std::string>() : std::string()) << '\n';
    return DiagnosticFailure("").exit_code();
  }
  return 0;
}

// ---------------------------------------------------------------------------

/// Basis evaluation grid: coordinates then the d basis values per node.
inline int cmd_export(const Options& o) {
  const json cfg = read_run_config(o);
  const io::BasisSpec bs = io::basis_spec_from_json(cfg.contains("basis") ? cfg["basis"] : json());
  Domain domain = bs.domain;
  if (domain.empty()) {
    if (!o.events || !o.subjects)
      throw ConfigError("export: give [basis] domain in the config or --events and --subjects");
    domain = io::read_dataset(*o.events, *o.subjects).domain;
  }
  const TensorBasis basis = TensorBasis::uniform(bs.basis.degree, bs.basis.n_interior, domain);
  const int res = o.grid_res.value_or(21);
  const SurfaceGrid g = make_lattice(domain, res, SurfaceKind::total);
  prepare_out(o.out);
  io::CsvWriter w(o.out / "basis_grid.csv");
  std::vector<std::string> head;
  for (int h = 0; h < g.dims(); ++h) head.push_back("x" + std::to_string(h + 1));
  for (int j = 0; j < basis.dim(); ++j) head.push_back("b" + std::to_string(j));
  w.row(head);
  for (std::size_t f = 0; f < g.size(); ++f) {
    const std::vector<double> y = g.point(f);
    const Eigen::VectorXd b = basis.eval(y);
    std::vector<std::string> row;
    for (const double v : y) row.push_back(io::fmt(v));
    for (Eigen::Index j = 0; j < b.size(); ++j) row.push_back(io::fmt(b[j]));
    w.row(row);
  }
  io::write_json(o.out / "basis.json", {{"basis", io::basis_to_json(bs.basis, domain)}, {"grid_res", res}});
  return 0;
}

}  // namespace dpmppp::cli
