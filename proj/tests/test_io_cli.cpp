#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "dpmppp/commands.hpp"
#include "dpmppp/io.hpp"

using namespace dpmppp;
namespace fs = std::filesystem;
using json = nlohmann::json;

#ifndef DPMPPP_CLI
#error "DPMPPP_CLI must name the command-line binary"
#endif
#ifndef DPMPPP_SOURCE_DIR
#error "DPMPPP_SOURCE_DIR must name the source tree"
#endif

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dpmppp_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void put(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs the CLI; returns the exit status, stderr in `err`.
int run(const std::string& args, std::string* err = nullptr) {
  const fs::path log = fs::temp_directory_path() / ("dpmppp_stderr_" + std::to_string(::getpid()));
  const std::string cmd = std::string(DPMPPP_CLI) + " " + args + " >/dev/null 2>" + log.string();
  const int st = std::system(cmd.c_str());
  if (err) *err = slurp(log);
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string config(const std::string& name) { return (fs::path(DPMPPP_SOURCE_DIR) / "configs" / name).string(); }

}  // namespace

TEST(Csv, DatasetRoundTripIsExact) {
  const fs::path dir = scratch("roundtrip");
  const Dataset d = simulate(setting_a(SettingScale::desk, 4));
  io::write_dataset(d, dir / "e.csv", dir / "s.csv");
  const Dataset back = io::read_dataset(dir / "e.csv", dir / "s.csv", d.domain);
  ASSERT_EQ(back.n(), d.n());
  for (std::size_t i = 0; i < d.n(); ++i) {
    EXPECT_EQ(back.subjects[i].subject_id, d.subjects[i].subject_id);
    EXPECT_EQ(back.subjects[i].offset_t, d.subjects[i].offset_t);
    EXPECT_EQ(back.subjects[i].coords, d.subjects[i].coords);
    EXPECT_EQ(back.subjects[i].marks, d.subjects[i].marks);
  }
  EXPECT_EQ(*back.true_labels, *d.true_labels);
}

TEST(Csv, QuotedFieldsAndBlankLines) {
  const fs::path dir = scratch("quoted");
  put(dir / "s.csv", "subject_id,offset_t\n\"a, b\",2\n\nc,1.5\n");
  put(dir / "e.csv", "subject_id,x,mark\n\"a, b\",0.25,1\nc,0.75,0\n");
  const Dataset d = io::read_dataset(dir / "e.csv", dir / "s.csv");
  ASSERT_EQ(d.n(), 2u);
  EXPECT_EQ(d.subjects[0].subject_id, "a, b");
  EXPECT_EQ(d.subjects[0].marks, (std::vector<int>{1}));
  EXPECT_EQ(d.domain[0].lo, 0.25);
  EXPECT_EQ(d.domain[0].hi, 0.75);
  EXPECT_FALSE(d.true_labels);
}

TEST(Csv, BadInputsNameTheLine) {
  const fs::path dir = scratch("badcsv");
  put(dir / "s.csv", "subject_id,offset_t\na,1\nb,2\n");
  put(dir / "e.csv", "subject_id,x,y,mark\na,0.1,0.2,0\nb,0.3,0.4,2\n");
  try {
    io::read_dataset(dir / "e.csv", dir / "s.csv");
    FAIL() << "bad mark accepted";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  put(dir / "e.csv", "subject_id,x,y,mark\nzz,0.1,0.2,0\n");
  EXPECT_THROW(io::read_dataset(dir / "e.csv", dir / "s.csv"), DataError);
  put(dir / "e.csv", "subject_id,x,y,mark\na,1.5,0.2,0\n");
  EXPECT_THROW(io::read_dataset(dir / "e.csv", dir / "s.csv", Domain{{0, 1}, {0, 1}}), DataError);
  put(dir / "s.csv", "subject_id,offset_t\na,1\na,2\n");
  EXPECT_THROW(io::read_subjects(dir / "s.csv"), DataError);
  put(dir / "s.csv", "subject_id,offset_t\na,0\n");
  EXPECT_THROW(io::read_subjects(dir / "s.csv"), DataError);
}

TEST(Config, TomlErrorsCarryTheLine) {
  try {
    io::parse_config_text("seed = 1\n[model\n", "toml", "cfg.toml");
    FAIL() << "bad toml accepted";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Config, TomlAndJsonAgree) {
  const json t = io::parse_config_text("[model]\ntruncation_k = 7\nradius_r = \"inf\"\ndelta = 0.001\n", "toml");
  const json j = io::parse_config_text(R"({"model": {"truncation_k": 7, "radius_r": "inf", "delta": 0.001}})", "json");
  const ModelConfig a = io::model_config_from_json(t["model"]), b = io::model_config_from_json(j["model"]);
  EXPECT_EQ(a.truncation_k, 7);
  EXPECT_EQ(b.truncation_k, 7);
  EXPECT_TRUE(std::isinf(a.radius_r));
  EXPECT_EQ(a.delta, b.delta);
}

TEST(Config, UnknownKeysAreRejected) {
  EXPECT_THROW(io::model_config_from_json(json{{"truncation_kk", 3}}), ConfigError);
  EXPECT_THROW(io::diagnose_config_from_json(json{{"trend", {{"dims", 3}}}}), ConfigError);
  EXPECT_THROW(io::model_config_from_json(json{{"truncation_k", "many"}}), ConfigError);
}

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"setting_a_desk.toml", "setting_a_reduced.toml", "minimal.json", "diagnose.toml"}) {
    const json c = io::load_config(config(name));
    if (c.contains("scenario")) EXPECT_NO_THROW(io::scenario_from_json(c["scenario"])) << name;
    if (c.contains("model")) EXPECT_NO_THROW(io::model_config_from_json(c["model"])) << name;
    if (c.contains("diagnose")) EXPECT_NO_THROW(io::diagnose_config_from_json(c["diagnose"])) << name;
  }
}

TEST(Json, FloatsKeepSeventeenDigits) {
  EXPECT_EQ(io::dump_json(json(0.1)), "0.10000000000000001");
  EXPECT_EQ(io::dump_json(json(1.0)), "1.0");
  EXPECT_EQ(io::dump_json(json(std::nan(""))), "null");
  EXPECT_EQ(io::dump_json(json(3)), "3");
  const double x = 0.123456789012345678;
  EXPECT_EQ(std::stod(io::dump_json(json(x))), x);
}

TEST(Theta, FileRoundTrip) {
  const fs::path dir = scratch("theta");
  Eigen::VectorXd mu(3);
  mu << 0.1, 1.0 / 3.0, 2e-300;
  Eigen::MatrixXd cov(3, 3);
  cov << 1, 0.5, 0, 0.5, 2, 1e-9, 0, 1e-9, 3;
  io::write_theta(dir / "t.csv", mu, cov);
  const auto [m, c] = io::read_theta(dir / "t.csv");
  EXPECT_EQ(m, mu);
  EXPECT_EQ(c, cov);
}

TEST(Cli, SimulateMinimal) {
  const fs::path dir = scratch("cli_sim");
  ASSERT_EQ(run("simulate --config " + config("minimal.json") + " --out " + dir.string()), 0);
  const Dataset d = io::read_dataset(dir / "events.csv", dir / "subjects.csv", Domain{{0, 1}, {0, 1}});
  EXPECT_EQ(d.n(), 1u);
  EXPECT_EQ(d.subjects[0].offset_t, 50.0);
  EXPECT_GT(d.total_events(), 0u);
  EXPECT_TRUE(fs::exists(dir / "scenario.json"));
}

TEST(Cli, FitOnCourtShapedData) {
  // Shot-chart layout: player ids, court coordinates in feet, made/missed
  // marks and minutes played as the exposure.
  const fs::path dir = scratch("cli_court");
  std::ostringstream ev, sub;
  sub << "player_id,minutes\n";
  ev << "player_id,x,y,made\n";
  Rng rng = derive_stream(77);
  for (int p = 0; p < 6; ++p) {
    sub << "p" << p << "," << 20 + 5 * p << "\n";
    const double cx = p % 2 == 0 ? 25.0 : 10.0, cy = p % 2 == 0 ? 5.0 : 25.0;
    for (int j = 0; j < 40; ++j)
      ev << "p" << p << "," << io::fmt(cx + 8 * (uniform01(rng) - 0.5)) << "," << io::fmt(cy + 8 * (uniform01(rng) - 0.5))
         << "," << (uniform01(rng) < 0.45) << "\n";
  }
  put(dir / "players.csv", sub.str());
  put(dir / "shots.csv", ev.str());
  put(dir / "court.json", R"({"seed": 3, "basis": {"degree": 2, "n_interior": 2, "domain": [[0, 50], [0, 47]]},
                              "model": {"truncation_k": 4, "n_starts": 2}})");
  std::string err;
  ASSERT_EQ(run("fit --config " + (dir / "court.json").string() + " --events " + (dir / "shots.csv").string() +
                    " --subjects " + (dir / "players.csv").string() + " --out " + (dir / "fit").string(),
                &err),
            0)
      << err;
  const json s = io::read_json(dir / "fit" / "summary.json");
  EXPECT_EQ(s["n_subjects"], 6);
  EXPECT_EQ(s["total_events"], 240);
  EXPECT_EQ(s["basis_dim"], 25);
  EXPECT_GE(s["n_active"].get<int>(), 1);
  const io::LabelsFile lab = io::read_labels(dir / "fit" / "labels.csv");
  EXPECT_EQ(lab.subject_ids.size(), 6u);

  // No true labels: surfaces only.
  ASSERT_EQ(run("evaluate --fit-dir " + (dir / "fit").string() + " --subjects " + (dir / "players.csv").string() +
                    " --grid-res 8 --pgm --out " + (dir / "eval").string(),
                &err),
            0)
      << err;
  EXPECT_NE(err.find("no true_label"), std::string::npos);
  const json m = io::read_json(dir / "eval" / "metrics.json");
  EXPECT_FALSE(m.contains("purity"));
  EXPECT_FALSE(fs::exists(dir / "eval" / "confusion.csv"));
  EXPECT_EQ(m["surfaces"].size(), 4 * s["n_active"].get<std::size_t>());
  const int k = s["active_clusters"][0]["cluster"].get<int>();
  EXPECT_TRUE(fs::exists(dir / "eval" / ("cluster_" + std::to_string(k) + "_total.pgm")));
}

TEST(Cli, EvaluateWithBaselines) {
  const fs::path dir = scratch("cli_eval");
  put(dir / "cfg.toml", "seed = 2\n[scenario]\npreset = \"setting_a_desk\"\nsizes = [3, 3, 3, 3]\n"
                        "[basis]\ndegree = 2\nn_interior = 2\ndomain = [[0.0, 1.0], [0.0, 1.0]]\n"
                        "[model]\ntruncation_k = 6\nn_starts = 1\n");
  const std::string c = " --config " + (dir / "cfg.toml").string();
  ASSERT_EQ(run("simulate" + c + " --out " + (dir / "data").string()), 0);
  const std::string data = " --events " + (dir / "data" / "events.csv").string() + " --subjects " +
                           (dir / "data" / "subjects.csv").string();
  ASSERT_EQ(run("fit" + c + data + " --out " + (dir / "fit").string()), 0);
  std::string err;
  ASSERT_EQ(run("evaluate" + c + data + " --fit-dir " + (dir / "fit").string() + " --baselines --grid-res 5 --out " +
                    (dir / "eval").string(),
                &err),
            0)
      << err;
  const json m = io::read_json(dir / "eval" / "metrics.json");
  EXPECT_TRUE(m["purities"].contains("proposed"));
  EXPECT_TRUE(m["purities"].contains("binned_kmeans"));
  EXPECT_TRUE(m["purities"].contains("kde_kmeans"));
  EXPECT_TRUE(fs::exists(dir / "eval" / "confusion.csv"));
  EXPECT_EQ(m["n_subjects"], 12);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("cli_exit");
  std::string err;
  EXPECT_EQ(run("fit --no-such-flag", &err), 2);
  put(dir / "bad.toml", "seed = 1\n[model\n");
  EXPECT_EQ(run("simulate --config " + (dir / "bad.toml").string() + " --out " + dir.string(), &err), 2);
  EXPECT_NE(err.find("line 2"), std::string::npos) << err;
  put(dir / "extra.toml", "[scenery]\nx = 1\n");
  EXPECT_EQ(run("simulate --config " + (dir / "extra.toml").string() + " --out " + dir.string(), &err), 2);
  put(dir / "s.csv", "subject_id,offset_t\na,1\n");
  put(dir / "e.csv", "subject_id,x,y,mark\na,0.1,0.2,7\n");
  EXPECT_EQ(run("fit --events " + (dir / "e.csv").string() + " --subjects " + (dir / "s.csv").string() + " --out " +
                    dir.string(),
                &err),
            3);
  EXPECT_NE(err.find("line 2"), std::string::npos) << err;
}

TEST(Cli, DiagnoseFailureIsReportedAndReproducible) {
  const fs::path dir = scratch("cli_diag");
  put(dir / "diag.toml",
      "seed = 4\n[diagnose]\ntrend_reps = 1\ntrend_inner = 1\ngap_reps = 1\ngap_grid = 41\n"
      "dominance_reps = 1\ndominance_ladder = [10.0, 100.0]\nconcavity_probes = 5\nconcavity_pairs = 5\n"
      "concavity_a = 0.0\n[diagnose.trend]\nexposure_ladder = [10.0, 1000.0]\n");
  const std::string c = "diagnose --config " + (dir / "diag.toml").string() + " --out ";
  ASSERT_EQ(run(c + (dir / "a").string()), 5);
  ASSERT_EQ(run(c + (dir / "b").string()), 5);
  const json v = io::read_json(dir / "a" / "verdict.json");
  EXPECT_FALSE(v["all_passed"].get<bool>());
  EXPECT_FALSE(v["concavity"]["passed"].get<bool>());
  EXPECT_TRUE(v["concavity"].contains("error"));
  EXPECT_TRUE(v["truncated_log"]["passed"].get<bool>());
  EXPECT_EQ(slurp(dir / "a" / "verdict.json"), slurp(dir / "b" / "verdict.json"));
}

TEST(Cli, ExportBasis) {
  const fs::path dir = scratch("cli_export");
  put(dir / "b.json", R"({"basis": {"degree": 1, "n_interior": 1, "domain": [[0, 2]]}})");
  ASSERT_EQ(run("export --config " + (dir / "b.json").string() + " --grid-res 5 --out " + dir.string()), 0);
  const io::CsvTable t = io::read_csv(dir / "basis_grid.csv");
  EXPECT_EQ(t.header, (std::vector<std::string>{"x1", "b0", "b1", "b2"}));
  ASSERT_EQ(t.rows.size(), 5u);
  EXPECT_EQ(t.rows[2][2], "1");
}
