// Acceptance gate: runs the twelve end-to-end criteria and prints one
// PASS/FAIL line per criterion. Exit status 0 only when all pass.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "dpmppp/commands.hpp"
#include "dpmppp/dpmppp.hpp"
#include "dpmppp/io.hpp"
#include "oracles.hpp"

using namespace dpmppp;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string f(double x, int prec = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, x);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Desk / reduced runs on seeds 1..10 from the shipped configs.
struct Recovery {
  std::vector<double> purity, binned, kde, fit_seconds, drawdown;
  std::vector<std::size_t> active;
  std::vector<std::vector<double>> recall;
  std::vector<int> satellites;
  double seconds = 0.0;
  double baseline_seconds = 0.0;
};

struct RunConfig {
  json scenario;
  io::BasisSpec basis;
  json model;
};

RunConfig load_run(const fs::path& path) {
  const json c = io::load_config(path);
  return {c["scenario"], io::basis_spec_from_json(c["basis"]), c["model"]};
}

double max_drawdown(const std::vector<double>& trace) {
  double best = -HUGE_VAL, worst = 0.0;
  for (const double e : trace) {
    best = std::max(best, e);
    worst = std::max(worst, best - e);
  }
  return worst;
}

Recovery run_recovery(const RunConfig& rc, bool baselines, int seeds) {
  Recovery r;
  for (int seed = 1; seed <= seeds; ++seed) {
    json sj = rc.scenario;
    sj["seed"] = seed;
    const ScenarioConfig sc = io::scenario_from_json(sj);
    const Dataset data = simulate(sc);
    json mj = rc.model;
    mj["seed"] = seed;
    const ModelConfig mc = io::model_config_from_json(mj);
    const auto t0 = std::chrono::steady_clock::now();
    const FitResult fr = fit(data, rc.basis.basis, mc);
    r.fit_seconds.push_back(seconds_since(t0));
    const std::vector<int>& truth = *data.true_labels;
    r.purity.push_back(purity(truth, fr.hard_labels));
    r.active.push_back(fr.active_clusters.size());
    r.drawdown.push_back(max_drawdown(fr.elbo_trace) / std::abs(fr.elbo_trace.back()));
    const ConfusionMatrix cm = confusion_matrix(truth, fr.hard_labels);
    const LabelMatching mt = match_labels(cm);
    r.recall.push_back(matched_recall(cm, mt));
    r.satellites.push_back(static_cast<int>(mt.unmatched_cols().size()));
    if (baselines) {
      const auto t1 = std::chrono::steady_clock::now();
      const BaselineLabels b = run_baselines(data, static_cast<int>(cm.row_labels.size()), static_cast<std::uint64_t>(seed));
      r.binned.push_back(purity(truth, b.binned));
      r.kde.push_back(purity(truth, b.kde));
      r.baseline_seconds += seconds_since(t1);
    }
    std::printf("    seed %2d: purity %.3f active %zu fit %.1fs", seed, r.purity.back(), r.active.back(),
                r.fit_seconds.back());
    if (baselines) std::printf(" binned %.3f kde %.3f", r.binned.back(), r.kde.back());
    std::printf(" min recall %.3f\n", *std::min_element(r.recall.back().begin(), r.recall.back().end()));
    std::fflush(stdout);
  }
  for (const double s : r.fit_seconds) r.seconds += s;
  return r;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (const double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------

Outcome c1_special() {
  std::vector<double> mus, s2s;
  for (int j = -100; j <= 100; ++j) mus.push_back(0.5 * j);
  for (int j = 0; j <= 80; ++j) s2s.push_back(std::pow(10.0, -4.0 + 8.0 * j / 80.0));
  const oracle::GaussHermite gh(200);
  std::vector<double> lib;
  lib.reserve(mus.size() * s2s.size());
  const auto t0 = std::chrono::steady_clock::now();
  for (const double mu : mus)
    for (const double s2 : s2s) lib.push_back(special::expected_log_square(mu, s2).value);
  const double lib_s = seconds_since(t0);
  double err = 0.0, gh_raw = 0.0;
  std::size_t q = 0;
  for (const double mu : mus)
    for (const double s2 : s2s) {
      const double ghv = gh.log_square(mu, s2);
      const double ref = std::abs(mu) / std::sqrt(s2) >= 8.0 ? ghv : oracle::frullani_h(mu, s2);
      err = std::max(err, std::abs(lib[q] - ref));
      gh_raw = std::max(gh_raw, std::abs(lib[q] - ghv));
      ++q;
    }
  return {err < 1e-8 && lib_s < 1.0, "max abs err " + f(err) + " over " + std::to_string(q) +
                                         " points (GH-200 alone: " + f(gh_raw) + "), library time " + f(lib_s) + " s"};
}

Outcome c2_basis() {
  const TensorBasis b = TensorBasis::uniform(3, 10, {{0.0, 1.0}, {0.0, 1.0}});
  Rng rng = derive_stream(2024);
  double pou = 0.0;
  for (int t = 0; t < 10000; ++t) {
    const std::vector<double> y{uniform01(rng), uniform01(rng)};
    pou = std::max(pou, std::abs(b.eval(y).sum() - 1.0));
  }
  const double mass = std::abs(mass_matrix(b).m.sum() - b.volume());
  const PenaltyMatrix p = penalty_matrix(b);
  return {pou <= 1e-12 && mass <= 1e-10 && p.rank == b.dim() - 1,
          "partition of unity " + f(pou) + ", |1'M1 - vol| " + f(mass) + ", rank " + std::to_string(p.rank) + " of " +
              std::to_string(b.dim())};
}

Outcome c3_closed_form() {
  SparseRows rows;
  rows.nnz = 1;
  rows.index = {0};
  rows.value = {1.0};
  const Eigen::MatrixXd one = Eigen::MatrixXd::Ones(1, 1), zero = Eigen::MatrixXd::Zero(1, 1);
  double et = 0.0, es = 0.0;
  for (const auto [a, c] : {std::pair{4.0, 16.0}, {1.0, 1.0}, {0.5, 3.0}, {37.0, 250.0}, {200.0, 1e3}}) {
    const ThetaBlockContext ctx = make_block_context(a, 0.0, one, zero, {WeightedRows{c, &rows}});
    const LaplaceResult l = laplace_block(ctx, 1e-4, Eigen::VectorXd::Constant(1, 1.0));
    et = std::max(et, std::abs(l.mode.theta[0] - std::sqrt(c / a)));
    es = std::max(es, std::abs(l.covariance(0, 0) - 1.0 / (4.0 * a)));
  }
  return {et <= 1e-10 && es <= 1e-10, "max |theta - sqrt(C/a)| " + f(et) + ", max |Sigma - 1/(4a)| " + f(es)};
}

Outcome c4_derivatives() {
  const Dataset data = simulate(setting_a(SettingScale::desk, 1));
  const TensorBasis basis = TensorBasis::uniform(3, 10, data.domain);
  const Eigen::MatrixXd mass = mass_matrix(basis).m, omega = penalty_matrix(basis).omega;
  std::vector<SparseRows> rows;
  double a = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i)
    if ((*data.true_labels)[i] == 0) {
      rows.push_back(build_rows(basis, data.subjects[i], 1));
      a += data.subjects[i].offset_t;
    }
  std::vector<WeightedRows> ev;
  for (const auto& r : rows) ev.push_back({1.0, &r});
  const ThetaBlockContext ctx = make_block_context(a, 50.0, mass, omega, ev);
  const int d = basis.dim();
  Rng rng = derive_stream(44);
  double grad_err = 0.0;
  for (int t = 0; t < 20; ++t) {
    Eigen::VectorXd th(d);
    for (int j = 0; j < d; ++j) th[j] = 0.05 + uniform01(rng);
    Eigen::VectorXd g;
    coefficient_value(th, ctx, &g);
    const Eigen::VectorXd fd =
        oracle::fd_gradient([&](const Eigen::VectorXd& x) { return coefficient_value(x, ctx, nullptr); }, th);
    grad_err = std::max(grad_err, (g - fd).norm() / fd.norm());
  }
  double lmax = -HUGE_VAL;
  for (int t = 0; t < 100; ++t) {
    Eigen::VectorXd th(d);
    for (int j = 0; j < d; ++j) th[j] = 1e-4 + 2.0 * uniform01(rng);
    const Eigen::MatrixXd h = coefficient_hessian(th, ctx);
    lmax = std::max(lmax, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(h, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff());
  }
  return {grad_err < 1e-6 && lmax < 0.0,
          "max gradient rel err " + f(grad_err) + " at 20 points, max Hessian eigenvalue " + f(lmax) + " at 100 probes"};
}

Outcome c5_elbo(const RunConfig& desk, const Recovery* rec) {
  json sj = desk.scenario;
  sj["seed"] = 1;
  const Dataset data = simulate(io::scenario_from_json(sj));
  json mj = desk.model;
  mj["seed"] = 1;
  const ModelConfig cfg = io::model_config_from_json(mj);
  const FitProblem p = FitProblem::build(
      data, std::make_shared<const TensorBasis>(TensorBasis::uniform(desk.basis.basis.degree, desk.basis.basis.n_interior,
                                                                     data.domain)));
  Rng rng = derive_stream(cfg.seed, 0xf17, 0);
  VariationalState s = init_state(p, cfg, rng);
  double worst = HUGE_VAL;  // smallest relative step
  for (int sweep = 0; sweep < 15; ++sweep) {
    if (sweep % 5 == 0)
      for (int k = 0; k < s.K; ++k)
        for (int m = 0; m < 2; ++m) laplace_update_theta(s, p, cfg, k, m);
    double prev = compute_elbo(s, p, cfg);
    const auto step = [&](const std::function<void()>& upd) {
      upd();
      const double now = compute_elbo(s, p, cfg);
      worst = std::min(worst, (now - prev) / std::abs(prev));
      prev = now;
    };
    step([&] {
      for (int k = 0; k < s.K; ++k)
        for (int m = 0; m < 2; ++m) update_variance(s, p, cfg, k, m);
    });
    step([&] { update_sticks(s, cfg); });
    step([&] { update_assignments(s, p); });
  }
  double draw = 0.0;
  if (rec) {
    draw = rec->drawdown.front();
  } else {
    draw = max_drawdown(fit(p, cfg).elbo_trace);
    draw /= 1.0;
  }
  return {worst >= -1e-8 && draw <= 1e-4,
          "worst conjugate step " + f(worst) + " x |ELBO|, desk full-sweep drawdown " + f(draw) + " x |ELBO| (seed 1)"};
}

Outcome c6_desk(const Recovery& r) {
  int pur = 0, act = 0;
  for (std::size_t s = 0; s < r.purity.size(); ++s) {
    pur += r.purity[s] >= 0.95;
    act += r.active[s] == 4;
  }
  return {pur >= 8 && act >= 8 && r.seconds < 600.0,
          "purity >= 0.95 in " + std::to_string(pur) + "/10, 4 active in " + std::to_string(act) +
              "/10, mean purity " + f(mean(r.purity), 4) + ", fits " + f(r.seconds, 4) + " s"};
}

Outcome c7_baselines(const Recovery& r) {
  const double p = mean(r.purity), b = mean(r.binned), k = mean(r.kde);
  const double total = r.seconds + r.baseline_seconds;
  return {p > b && p > k && total < 900.0,
          "mean purity proposed " + f(p, 4) + ", binned+kmeans " + f(b, 4) + ", KDE+kmeans " + f(k, 4) + ", " +
              f(total, 4) + " s"};
}

Outcome c8_reduced(const Recovery& r) {
  int ok = 0;
  for (const auto& rec : r.recall) ok += *std::min_element(rec.begin(), rec.end()) >= 0.9;
  int sat = 0;
  for (const int s : r.satellites) sat += s;
  return {ok >= 7, "all clusters recalled >= 0.9 in " + std::to_string(ok) + "/10 seeds (" + std::to_string(sat) +
                       " satellite clusters in total), " + f(r.seconds, 4) + " s"};
}

Outcome c9_trend() {
  const TrendResult t = mode_consistency_trend(default_theory_scenario(3), 10, 1, 5);
  const std::vector<double> m = t.mean_error();
  return {t.reps_decreasing() >= 9, std::to_string(t.reps_decreasing()) + "/10 reps decreasing over exposures 10..1e4; mean error " +
                                        f(m.front()) + " -> " + f(m.back())};
}

Outcome c10_gap() {
  const GapResult g = chamber_gap_check(default_theory_scenario(2), 1000.0, 20, 1, 201);
  return {g.gap_count() >= 19, "gap in " + std::to_string(g.gap_count()) + "/20 reps at exposure 1e3, d = 2"};
}

Outcome c11_dominance() {
  TheoryScenario s = default_theory_scenario(2);
  s.exposure_ladder = {10.0, 100.0, 1000.0};
  const DominanceResult d = dominance_ratio(s, 10, 1, 200);
  double scale = 0.0;
  for (const auto& r : d.reps)
    for (const double v : r.log_z_positive) scale = std::max(scale, std::abs(v));
  const double tol = 1e-9 * scale;
  return {d.reps_decreasing() >= 9 && d.max_symmetry_gap() <= tol,
          std::to_string(d.reps_decreasing()) + "/10 reps decreasing; max |log Z(-D) - log Z(D)| " +
              f(d.max_symmetry_gap()) + " (tolerance " + f(tol) + ")"};
}

// --- CLI determinism

int sh(const std::string& cmd) {
  const int st = std::system((cmd + " >/dev/null 2>&1").c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Every file under `dir`, relative path -> bytes.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

Outcome c12_determinism(const std::string& cli, const fs::path& root) {
  const fs::path base = fs::temp_directory_path() / ("dpmppp_accept_" + std::to_string(::getpid()));
  fs::remove_all(base);
  fs::create_directories(base);
  {
    std::ofstream cfg(base / "run.toml");
    cfg << "seed = 5\n[scenario]\npreset = \"setting_a_desk\"\nsizes = [3, 5, 4, 4]\n"
           "[basis]\ndegree = 3\nn_interior = 6\ndomain = [[0.0, 1.0], [0.0, 1.0]]\n"
           "[model]\ntruncation_k = 10\nn_starts = 3\n[evaluate]\ngrid_res = 25\nbaselines = true\n"
           "[diagnose]\ntrend_reps = 2\ntrend_inner = 2\ngap_reps = 2\ngap_grid = 61\ndominance_reps = 2\n"
           "concavity_probes = 20\nconcavity_pairs = 20\n";
  }
  const std::string c = " --config " + (base / "run.toml").string();
  const auto pipeline = [&](const std::string& tag, int jobs) {
    const fs::path out = base / tag;
    const std::string j = " --jobs " + std::to_string(jobs);
    const std::string data =
        " --events " + (out / "data" / "events.csv").string() + " --subjects " + (out / "data" / "subjects.csv").string();
    int rc = 0;
    rc |= sh(cli + " simulate" + c + j + " --out " + (out / "data").string());
    rc |= sh(cli + " fit" + c + j + data + " --out " + (out / "fit").string());
    rc |= sh(cli + " evaluate" + c + data + " --pgm --fit-dir " + (out / "fit").string() + " --out " + (out / "eval").string());
    rc |= sh(cli + " export" + c + " --out " + (out / "export").string());
    rc |= sh(cli + " diagnose" + c + j + " --out " + (out / "diag").string());
    return rc;
  };
  const auto t0 = std::chrono::steady_clock::now();
  const int ra = pipeline("a", 1), rb = pipeline("b", 1), rc = pipeline("c", 2);
  const double secs = seconds_since(t0);
  const auto ta = tree(base / "a"), tb = tree(base / "b"), tc = tree(base / "c");
  fs::remove_all(base);
  (void)root;
  const bool same = !ta.empty() && ta == tb && ta == tc;
  return {ra == 0 && rb == 0 && rc == 0 && same && secs < 60.0,
          std::to_string(ta.size()) + " files from simulate/fit/evaluate/export/diagnose " +
              (same ? "byte-identical" : "DIFFER") + " across 2 runs and --jobs 1/2 (exit " + std::to_string(ra) + "/" +
              std::to_string(rb) + "/" + std::to_string(rc) + "), " + f(secs, 3) + " s for 3 pipelines"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only;
  std::string cli = DPMPPP_CLI;
  std::string root = DPMPPP_SOURCE_DIR;
  app.add_option("--only", only, "criteria to run (default all)")->delimiter(',');
  app.add_option("--cli", cli, "path of the dpmppp binary");
  app.add_option("--source-dir", root, "source tree holding configs/");
  CLI11_PARSE(app, argc, argv);
  const std::set<int> want(only.begin(), only.end());
  const auto on = [&](int c) { return want.empty() || want.count(c) > 0; };

  const RunConfig desk = load_run(fs::path(root) / "configs" / "setting_a_desk.toml");
  const RunConfig reduced = load_run(fs::path(root) / "configs" / "setting_a_reduced.toml");

  std::map<int, Outcome> results;
  std::map<int, double> times;
  const auto run = [&](int id, const std::function<Outcome()>& fn) {
    if (!on(id)) return;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      results[id] = fn();
    } catch (const std::exception& e) {
      results[id] = {false, std::string("error: ") + e.what()};
    }
    times[id] = seconds_since(t0);
    std::printf("criterion %2d: %s  %s  [%.1f s]\n", id, results[id].pass ? "PASS" : "FAIL", results[id].detail.c_str(),
                times[id]);
    std::fflush(stdout);
  };

  run(1, c1_special);
  run(2, c2_basis);
  run(3, c3_closed_form);
  run(4, c4_derivatives);

  std::optional<Recovery> desk_rec;
  if (on(5) || on(6) || on(7)) {
    if (on(6) || on(7)) {
      std::printf("  Setting-A desk, seeds 1-10:\n");
      desk_rec = run_recovery(desk, true, 10);
    }
  }
  run(5, [&] { return c5_elbo(desk, desk_rec ? &*desk_rec : nullptr); });
  if (desk_rec) {
    run(6, [&] { return c6_desk(*desk_rec); });
    run(7, [&] { return c7_baselines(*desk_rec); });
  }
  if (on(8)) {
    std::printf("  Setting-A reduced, seeds 1-10:\n");
    const Recovery red = run_recovery(reduced, false, 10);
    run(8, [&] { return c8_reduced(red); });
  }
  run(9, c9_trend);
  run(10, c10_gap);
  run(11, c11_dominance);
  run(12, [&] { return c12_determinism(cli, root); });

  int failed = 0;
  for (const auto& [id, o] : results) failed += o.pass ? 0 : 1;
  std::printf("\n%zu criteria run, %d failed\n", results.size(), failed);
  std::printf("summary:");
  for (const auto& [id, o] : results) std::printf(" %d=%s", id, o.pass ? "PASS" : "FAIL");
  std::printf("\n");
  return failed == 0 ? 0 : 1;
}
