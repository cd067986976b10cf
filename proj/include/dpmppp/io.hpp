#pragma once

// Files: events / subjects CSVs, fit artifacts, and JSON or TOML configs
// read into one nlohmann::json tree.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>
#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include "dpmppp/diagnostics.hpp"
#include "dpmppp/errors.hpp"
#include "dpmppp/evaluate.hpp"
#include "dpmppp/inference.hpp"
#include "dpmppp/pointprocess.hpp"
#include "dpmppp/scenarios.hpp"

namespace dpmppp::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

/// %.17g: round-trips every double.
inline std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  /// 1-based file line of each row.
  std::vector<std::size_t> lines;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line, const std::string& where) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (quoted) throw DataError(where + ": unterminated quote");
  out.push_back(std::move(cur));
  return out;
}

inline std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (const char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

inline double parse_double(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw DataError(where + ": '" + s + "' is not a number");
  }
  if (used != s.size() || !std::isfinite(v)) throw DataError(where + ": '" + s + "' is not a finite number");
  return v;
}

inline int parse_int(const std::string& s, const std::string& where) {
  const double v = parse_double(s, where);
  if (v != std::floor(v) || std::abs(v) > 1e9) throw DataError(where + ": '" + s + "' is not an integer");
  return static_cast<int>(v);
}

}  // namespace detail

inline CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  CsvTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = detail::split_csv_line(line, path.string() + " line " + std::to_string(lineno));
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      throw DataError(path.string() + " line " + std::to_string(lineno) + ": expected " +
                      std::to_string(t.header.size()) + " fields, found " + std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
    t.lines.push_back(lineno);
  }
  if (t.header.empty()) throw DataError(path.string() + ": missing header");
  return t;
}

/// Single writer per file; lines end in '\n'.
class CsvWriter {
public:
  explicit CsvWriter(const fs::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw DataError("cannot write " + path.string());
  }
  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << detail::quote_if_needed(fields[i]);
    }
    out_ << '\n';
  }

private:
  std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Datasets

struct SubjectTable {
  std::vector<std::string> ids;
  std::vector<double> offsets;
  std::optional<std::vector<int>> labels;
};

/// subject_id, offset_t[, true_label] (positional).
inline SubjectTable read_subjects(const fs::path& subjects_path) {
  const CsvTable subj = read_csv(subjects_path);
  if (subj.header.size() < 2 || subj.header.size() > 3)
    throw DataError(subjects_path.string() + ": expected columns subject_id,offset_t[,true_label]");
  SubjectTable out;
  std::set<std::string> seen;
  std::vector<int> labels;
  for (std::size_t r = 0; r < subj.rows.size(); ++r) {
    const std::string where = subjects_path.string() + " line " + std::to_string(subj.lines[r]);
    const auto& row = subj.rows[r];
    if (row[0].empty()) throw DataError(where + ": empty subject_id");
    if (!seen.insert(row[0]).second) throw DataError(where + ": duplicate subject_id '" + row[0] + "'");
    const double t = detail::parse_double(row[1], where);
    if (!(t > 0.0)) throw DataError(where + ": offset_t must be > 0");
    out.ids.push_back(row[0]);
    out.offsets.push_back(t);
    if (subj.header.size() == 3) {
      const int l = detail::parse_int(row[2], where);
      if (l < 0) throw DataError(where + ": true_label must be >= 0");
      labels.push_back(l);
    }
  }
  if (out.ids.empty()) throw DataError(subjects_path.string() + ": no subjects");
  if (subj.header.size() == 3) out.labels = std::move(labels);
  return out;
}

/// Events: subject_id, x1..xH, mark (positional). Subjects without events
/// are kept. When `domain` is empty the bounding box of the events is used.
inline Dataset read_dataset(const fs::path& events_path, const fs::path& subjects_path,
                            Domain domain = {}) {
  SubjectTable st = read_subjects(subjects_path);
  Dataset data;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < st.ids.size(); ++i) {
    index.emplace(st.ids[i], i);
    MarkedPattern s;
    s.subject_id = st.ids[i];
    s.offset_t = st.offsets[i];
    data.subjects.push_back(std::move(s));
  }
  const bool has_labels = st.labels.has_value();
  std::vector<int> labels = has_labels ? *st.labels : std::vector<int>{};

  const CsvTable ev = read_csv(events_path);
  if (ev.header.size() < 3)
    throw DataError(events_path.string() + ": expected columns subject_id,x1,...,xH,mark");
  const int H = static_cast<int>(ev.header.size()) - 2;
  if (!domain.empty() && static_cast<int>(domain.size()) != H)
    throw DataError(events_path.string() + ": " + std::to_string(H) +
                    " coordinate columns but the domain has " + std::to_string(domain.size()) + " axes");
  for (auto& s : data.subjects) s.dims = H;
  std::vector<double> lo(static_cast<std::size_t>(H), INFINITY), hi(static_cast<std::size_t>(H), -INFINITY);
  std::vector<double> y(static_cast<std::size_t>(H));
  for (std::size_t r = 0; r < ev.rows.size(); ++r) {
    const std::string where = events_path.string() + " line " + std::to_string(ev.lines[r]);
    const auto& row = ev.rows[r];
    const auto it = index.find(row[0]);
    if (it == index.end()) throw DataError(where + ": unknown subject_id '" + row[0] + "'");
    for (int h = 0; h < H; ++h) {
      y[h] = detail::parse_double(row[static_cast<std::size_t>(h) + 1], where);
      lo[h] = std::min(lo[h], y[h]);
      hi[h] = std::max(hi[h], y[h]);
    }
    const int mark = detail::parse_int(row.back(), where);
    if (mark != 0 && mark != 1) throw DataError(where + ": mark must be 0 or 1, found " + row.back());
    if (!domain.empty())
      for (int h = 0; h < H; ++h) {
        const auto& iv = domain[static_cast<std::size_t>(h)];
        const double slack = kDomainSlack * std::max(1.0, iv.length());
        if (!(y[h] >= iv.lo - slack && y[h] <= iv.hi + slack))
          throw DataError(where + ": coordinate " + std::to_string(h + 1) + " outside the domain");
      }
    data.subjects[it->second].add(y, mark);
  }
  if (domain.empty()) {
    if (ev.rows.empty()) throw DataError(events_path.string() + ": no events and no domain given");
    for (int h = 0; h < H; ++h) {
      double a = lo[h], b = hi[h];
      if (!(b > a)) b = a + 1.0;
      domain.push_back({a, b});
    }
  }
  data.domain = std::move(domain);
  if (has_labels) data.true_labels = std::move(labels);
  data.validate();
  return data;
}

inline void write_dataset(const Dataset& data, const fs::path& events_path, const fs::path& subjects_path) {
  {
    CsvWriter w(events_path);
    std::vector<std::string> head{"subject_id"};
    for (int h = 0; h < data.dims(); ++h) head.push_back("x" + std::to_string(h + 1));
    head.push_back("mark");
    w.row(head);
    for (const auto& s : data.subjects)
      for (std::size_t j = 0; j < s.size(); ++j) {
        std::vector<std::string> f{s.subject_id};
        for (const double v : s.point(j)) f.push_back(fmt(v));
        f.push_back(std::to_string(s.marks[j]));
        w.row(f);
      }
  }
  CsvWriter w(subjects_path);
  if (data.true_labels)
    w.row({"subject_id", "offset_t", "true_label"});
  else
    w.row({"subject_id", "offset_t"});
  for (std::size_t i = 0; i < data.n(); ++i) {
    std::vector<std::string> f{data.subjects[i].subject_id, fmt(data.subjects[i].offset_t)};
    if (data.true_labels) f.push_back(std::to_string((*data.true_labels)[i]));
    w.row(f);
  }
}

// ---------------------------------------------------------------------------
// Configs

namespace detail {

inline json toml_to_json(const toml::node& node) {
  if (const auto* t = node.as_table()) {
    json j = json::object();
    for (const auto& [k, v] : *t) j[std::string(k.str())] = toml_to_json(v);
    return j;
  }
  if (const auto* a = node.as_array()) {
    json j = json::array();
    for (const auto& v : *a) j.push_back(toml_to_json(v));
    return j;
  }
  if (const auto* v = node.as_string()) return v->get();
  if (const auto* v = node.as_integer()) return v->get();
  if (const auto* v = node.as_floating_point()) return v->get();
  if (const auto* v = node.as_boolean()) return v->get();
  const auto& src = node.source();
  throw ConfigError("config line " + std::to_string(src.begin.line) +
                    ": dates and times are not supported");
}

}  // namespace detail

inline json parse_config_text(const std::string& text, const std::string& format,
                              const std::string& name = "config") {
  if (format == "json") {
    try {
      return json::parse(text, nullptr, true, true);
    } catch (const json::parse_error& e) {
      throw ConfigError(name + ": " + e.what());
    }
  }
  if (format == "toml") {
    try {
      return detail::toml_to_json(toml::parse(text, name));
    } catch (const toml::parse_error& e) {
      std::ostringstream msg;
      msg << name << " line " << e.source().begin.line << ", column " << e.source().begin.column
          << ": " << e.description();
      throw ConfigError(msg.str());
    }
  }
  throw ConfigError(name + ": unknown config format '" + format + "'");
}

/// Format chosen by extension: .json or .toml.
inline json load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  std::string ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext != ".json" && ext != ".toml")
    throw ConfigError(path.string() + ": config must end in .json or .toml");
  return parse_config_text(ss.str(), ext.substr(1), path.string());
}

/// Typed access to one config section; rejects unknown keys on finish().
class Section {
public:
  Section(const json& j, std::string name) : name_(std::move(name)) {
    if (j.is_null()) {
      j_ = json::object();
    } else if (!j.is_object()) {
      throw ConfigError("[" + name_ + "] must be a table");
    } else {
      j_ = j;
    }
  }

  [[nodiscard]] bool has(const std::string& key) const { return j_.contains(key); }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (j_[key].is_string() && (j_[key] == "inf" || j_[key] == "infinity")) {
          out = std::numeric_limits<double>::infinity();
          return;
        }
      }
      out = j_[key].get<T>();
    } catch (const json::exception&) {
      throw ConfigError("[" + name_ + "] " + key + ": wrong type");
    }
  }

  [[nodiscard]] const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_[key];
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("[" + name_ + "] unknown key '" + k + "'");
  }

private:
  json j_;
  std::string name_;
  std::set<std::string> seen_;
};

inline Domain domain_from_json(const json& j, const std::string& where) {
  Domain d;
  if (!j.is_array() || j.empty()) throw ConfigError(where + ": domain must be a list of [lo, hi] pairs");
  for (const auto& iv : j) {
    if (!iv.is_array() || iv.size() != 2 || !iv[0].is_number() || !iv[1].is_number())
      throw ConfigError(where + ": every domain axis must be [lo, hi]");
    d.push_back({iv[0].get<double>(), iv[1].get<double>()});
  }
  check_domain(d);
  return d;
}

inline json domain_to_json(const Domain& d) {
  json j = json::array();
  for (const auto& iv : d) j.push_back({iv.lo, iv.hi});
  return j;
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  Section s(j, "model");
  s.get("truncation_k", c.truncation_k);
  s.get("dp_alpha", c.dp_alpha);
  s.get("ig_a0", c.ig_a0);
  s.get("ig_b0", c.ig_b0);
  s.get("delta", c.delta);
  s.get("radius_r", c.radius_r);
  s.get("elbo_rel_tol", c.elbo_rel_tol);
  s.get("max_iters", c.max_iters);
  s.get("n_starts", c.n_starts);
  s.get("seed", c.seed);
  s.get("jobs", c.jobs);
  s.get("init_sigma_scale", c.init_sigma_scale);
  s.get("exposure_floor", c.exposure_floor);
  s.get("nu_floor", c.nu_floor);
  s.finish();
  c.validate();
  return c;
}

inline json model_config_to_json(const ModelConfig& c) {
  json j;
  j["truncation_k"] = c.truncation_k;
  j["dp_alpha"] = c.dp_alpha;
  j["ig_a0"] = c.ig_a0;
  j["ig_b0"] = c.ig_b0;
  j["delta"] = c.delta;
  j["radius_r"] = std::isfinite(c.radius_r) ? json(c.radius_r) : json("inf");
  j["elbo_rel_tol"] = c.elbo_rel_tol;
  j["max_iters"] = c.max_iters;
  j["n_starts"] = c.n_starts;
  j["seed"] = c.seed;
  j["init_sigma_scale"] = c.init_sigma_scale;
  j["exposure_floor"] = c.exposure_floor;
  j["nu_floor"] = c.nu_floor;
  return j;
}

struct BasisSpec {
  BasisConfig basis;
  /// Empty: taken from the data.
  Domain domain;
};

inline BasisSpec basis_spec_from_json(const json& j) {
  BasisSpec b;
  Section s(j, "basis");
  s.get("degree", b.basis.degree);
  s.get("n_interior", b.basis.n_interior);
  if (s.has("domain")) b.domain = domain_from_json(s.raw("domain"), "[basis]");
  s.finish();
  if (b.basis.degree < 0 || b.basis.n_interior < 0)
    throw ConfigError("[basis] degree and n_interior must be >= 0");
  return b;
}

inline json basis_to_json(const BasisConfig& b, const Domain& d) {
  return {{"degree", b.degree}, {"n_interior", b.n_interior}, {"domain", domain_to_json(d)}};
}

inline ShapeComponent component_from_json(const json& j, const std::string& where) {
  ShapeComponent c;
  Section s(j, where);
  std::string kind = "bump";
  s.get("kind", kind);
  if (kind == "bump")
    c.kind = ShapeComponent::Kind::bump;
  else if (kind == "ring")
    c.kind = ShapeComponent::Kind::ring;
  else if (kind == "band")
    c.kind = ShapeComponent::Kind::band;
  else
    throw ConfigError("[" + where + "] unknown component kind '" + kind + "'");
  s.get("weight", c.weight);
  s.get("center", c.center);
  s.get("sd", c.sd);
  s.get("radius", c.radius);
  s.get("width", c.width);
  s.get("axis", c.axis);
  s.get("position", c.position);
  s.finish();
  return c;
}

inline ShapeIntensity shape_from_json(const json& j, const std::string& where) {
  ShapeIntensity sh;
  Section s(j, where);
  s.get("base", sh.base);
  s.get("mass", sh.mass);
  if (s.has("components")) {
    const json& comps = s.raw("components");
    if (!comps.is_array()) throw ConfigError("[" + where + "] components must be a list");
    for (std::size_t i = 0; i < comps.size(); ++i)
      sh.components.push_back(component_from_json(comps[i], where + ".components." + std::to_string(i)));
  }
  s.finish();
  return sh;
}

inline json component_to_json(const ShapeComponent& c) {
  json j;
  switch (c.kind) {
    case ShapeComponent::Kind::bump:
      j = {{"kind", "bump"}, {"weight", c.weight}, {"center", c.center}, {"sd", c.sd}};
      break;
    case ShapeComponent::Kind::ring:
      j = {{"kind", "ring"}, {"weight", c.weight}, {"center", c.center}, {"radius", c.radius}, {"width", c.width}};
      break;
    case ShapeComponent::Kind::band:
      j = {{"kind", "band"}, {"weight", c.weight}, {"axis", c.axis}, {"position", c.position}, {"width", c.width}};
      break;
  }
  return j;
}

inline json scenario_to_json(const ScenarioConfig& sc) {
  json j;
  j["name"] = sc.name;
  j["seed"] = sc.seed;
  j["domain"] = domain_to_json(sc.domain);
  j["sizes"] = sc.sizes;
  j["offset_range"] = {sc.offset_range.first, sc.offset_range.second};
  j["clusters"] = json::array();
  for (const auto& c : sc.clusters) {
    json cj;
    for (int m = 0; m < 2; ++m) {
      json mj{{"base", c[m].base}, {"mass", c[m].mass}, {"components", json::array()}};
      for (const auto& comp : c[m].components) mj["components"].push_back(component_to_json(comp));
      cj["mark" + std::to_string(m)] = mj;
    }
    j["clusters"].push_back(cj);
  }
  return j;
}

/// `preset` ("setting_a_full" | "setting_a_desk" | "setting_a_reduced")
/// fills every field; explicit keys override it.
inline ScenarioConfig scenario_from_json(const json& j) {
  Section s(j, "scenario");
  ScenarioConfig sc;
  std::string preset;
  s.get("preset", preset);
  std::uint64_t seed = 0;
  s.get("seed", seed);
  if (!preset.empty()) {
    if (preset == "setting_a_full")
      sc = setting_a(SettingScale::full, seed);
    else if (preset == "setting_a_desk")
      sc = setting_a(SettingScale::desk, seed);
    else if (preset == "setting_a_reduced")
      sc = setting_a(SettingScale::reduced, seed);
    else
      throw ConfigError("[scenario] unknown preset '" + preset + "'");
  }
  sc.seed = seed;
  s.get("name", sc.name);
  if (s.has("domain")) sc.domain = domain_from_json(s.raw("domain"), "[scenario]");
  s.get("sizes", sc.sizes);
  if (s.has("offset_range")) {
    std::vector<double> r;
    try {
      r = s.raw("offset_range").get<std::vector<double>>();
    } catch (const json::exception&) {
      throw ConfigError("[scenario] offset_range must be [lo, hi]");
    }
    if (r.size() != 2) throw ConfigError("[scenario] offset_range must be [lo, hi]");
    sc.offset_range = {r[0], r[1]};
  }
  if (s.has("clusters")) {
    const json& cl = s.raw("clusters");
    if (!cl.is_array()) throw ConfigError("[scenario] clusters must be a list");
    sc.clusters.clear();
    for (std::size_t k = 0; k < cl.size(); ++k) {
      const std::string where = "scenario.clusters." + std::to_string(k);
      Section cs(cl[k], where);
      std::array<ShapeIntensity, 2> pair;
      pair[0] = shape_from_json(cs.raw("mark0"), where + ".mark0");
      pair[1] = shape_from_json(cs.raw("mark1"), where + ".mark1");
      cs.finish();
      sc.clusters.push_back(std::move(pair));
    }
  }
  s.finish();
  sc.validate();
  return sc;
}

struct DiagnoseConfig {
  TheoryScenario trend = default_theory_scenario(3);
  TheoryScenario chamber = default_theory_scenario(2);
  int trend_reps = 10;
  int trend_inner = 5;
  double gap_exposure = 1000.0;
  int gap_reps = 20;
  int gap_grid = 201;
  std::vector<double> dominance_ladder{10.0, 100.0, 1000.0};
  int dominance_reps = 10;
  int dominance_grid = 200;
  int concavity_probes = 100;
  int concavity_pairs = 50;
  /// Exposure weight of the probed block; 0 exercises the failure path.
  double concavity_a = 100.0;
  std::uint64_t seed = 0;
};

inline TheoryScenario theory_from_json(const json& j, TheoryScenario base, const std::string& where) {
  Section s(j, where);
  int d = base.dim_d;
  s.get("dim_d", d);
  if (d != base.dim_d) base = default_theory_scenario(d);
  if (s.has("true_theta")) {
    std::vector<double> t;
    s.get("true_theta", t);
    base.true_theta = Eigen::Map<const Eigen::VectorXd>(t.data(), static_cast<Eigen::Index>(t.size()));
  }
  if (s.has("domain")) {
    const Domain dom = domain_from_json(s.raw("domain"), "[" + where + "]");
    if (dom.size() != 1) throw ConfigError("[" + where + "] domain must have one axis");
    base.domain = dom[0];
  }
  s.get("exposure_ladder", base.exposure_ladder);
  s.get("delta", base.delta);
  s.get("radius_r", base.radius_r);
  s.get("eta", base.eta);
  s.finish();
  base.validate();
  return base;
}

inline DiagnoseConfig diagnose_config_from_json(const json& j) {
  DiagnoseConfig c;
  Section s(j, "diagnose");
  s.get("seed", c.seed);
  if (s.has("trend")) c.trend = theory_from_json(s.raw("trend"), c.trend, "diagnose.trend");
  if (s.has("chamber")) c.chamber = theory_from_json(s.raw("chamber"), c.chamber, "diagnose.chamber");
  s.get("trend_reps", c.trend_reps);
  s.get("trend_inner", c.trend_inner);
  s.get("gap_exposure", c.gap_exposure);
  s.get("gap_reps", c.gap_reps);
  s.get("gap_grid", c.gap_grid);
  s.get("dominance_ladder", c.dominance_ladder);
  s.get("dominance_reps", c.dominance_reps);
  s.get("dominance_grid", c.dominance_grid);
  s.get("concavity_probes", c.concavity_probes);
  s.get("concavity_pairs", c.concavity_pairs);
  s.get("concavity_a", c.concavity_a);
  s.finish();
  if (c.trend_reps < 1 || c.trend_inner < 1 || c.gap_reps < 1 || c.dominance_reps < 1 ||
      c.concavity_probes < 1 || c.concavity_pairs < 1)
    throw ConfigError("[diagnose] rep and probe counts must be >= 1");
  return c;
}

// ---------------------------------------------------------------------------
// Fit artifacts

inline void write_labels(const fs::path& path, const Dataset& data, const FitResult& r) {
  CsvWriter w(path);
  std::vector<std::string> head{"subject_id", "hard_label"};
  for (int k = 0; k < r.state.K; ++k) head.push_back("nu_" + std::to_string(k));
  w.row(head);
  for (std::size_t i = 0; i < data.n(); ++i) {
    std::vector<std::string> f{data.subjects[i].subject_id, std::to_string(r.hard_labels[i])};
    for (int k = 0; k < r.state.K; ++k) f.push_back(fmt(r.state.nu(static_cast<Eigen::Index>(i), k)));
    w.row(f);
  }
}

inline void write_elbo_trace(const fs::path& path, const std::vector<double>& trace) {
  CsvWriter w(path);
  w.row({"iteration", "elbo"});
  for (std::size_t t = 0; t < trace.size(); ++t) w.row({std::to_string(t + 1), fmt(trace[t])});
}

/// First row: mean; then the d rows of the covariance.
inline void write_theta(const fs::path& path, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  CsvWriter w(path);
  std::vector<std::string> head;
  for (Eigen::Index j = 0; j < mean.size(); ++j) head.push_back("c" + std::to_string(j));
  w.row(head);
  std::vector<std::string> f;
  for (Eigen::Index j = 0; j < mean.size(); ++j) f.push_back(fmt(mean[j]));
  w.row(f);
  for (Eigen::Index r = 0; r < cov.rows(); ++r) {
    f.clear();
    for (Eigen::Index c = 0; c < cov.cols(); ++c) f.push_back(fmt(cov(r, c)));
    w.row(f);
  }
}

inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> read_theta(const fs::path& path) {
  const CsvTable t = read_csv(path);
  const auto d = static_cast<Eigen::Index>(t.header.size());
  if (static_cast<Eigen::Index>(t.rows.size()) != d + 1)
    throw DataError(path.string() + ": expected a mean row and " + std::to_string(d) + " covariance rows");
  Eigen::VectorXd mean(d);
  Eigen::MatrixXd cov(d, d);
  for (Eigen::Index j = 0; j < d; ++j) mean[j] = detail::parse_double(t.rows[0][j], path.string());
  for (Eigen::Index r = 0; r < d; ++r)
    for (Eigen::Index c = 0; c < d; ++c)
      cov(r, c) = detail::parse_double(t.rows[static_cast<std::size_t>(r) + 1][c], path.string());
  return {mean, cov};
}

inline std::string theta_file_name(int k, int m) {
  return "theta_" + std::to_string(k) + "_" + std::to_string(m) + ".csv";
}

inline json fit_summary(const Dataset& data, const FitResult& r, const ModelConfig& cfg,
                        const BasisConfig& basis) {
  json j;
  j["n_subjects"] = data.n();
  j["total_events"] = data.total_events();
  j["truncation_k"] = r.state.K;
  j["basis_dim"] = r.state.d;
  json active = json::array();
  for (const int k : r.active_clusters) {
    active.push_back({{"cluster", k},
                      {"responsibility_mass", responsibility_mass(r.state, k)},
                      {"hard_size", std::count(r.hard_labels.begin(), r.hard_labels.end(), k)}});
  }
  j["active_clusters"] = active;
  j["n_active"] = r.active_clusters.size();
  j["final_elbo"] = r.elbo_trace.empty() ? 0.0 : r.elbo_trace.back();
  j["iterations"] = r.elbo_trace.size();
  j["converged"] = r.converged;
  j["unconverged_modes"] = r.unconverged_modes;
  j["best_start"] = r.best_start;
  json starts = json::array();
  for (const double e : r.start_elbos) starts.push_back(std::isfinite(e) ? json(e) : json(nullptr));
  j["start_elbos"] = starts;
  j["config"] = {{"model", model_config_to_json(cfg)}, {"basis", basis_to_json(basis, data.domain)}};
  return j;
}

namespace detail {

inline void dump_json(std::ostream& out, const json& j, int indent) {
  const std::string pad(static_cast<std::size_t>(indent + 2), ' ');
  const std::string close(static_cast<std::size_t>(indent), ' ');
  if (j.is_object()) {
    if (j.empty()) {
      out << "{}";
      return;
    }
    out << "{\n";
    bool first = true;
    for (const auto& [k, v] : j.items()) {
      if (!first) out << ",\n";
      first = false;
      out << pad << json(k).dump() << ": ";
      dump_json(out, v, indent + 2);
    }
    out << '\n' << close << '}';
  } else if (j.is_array()) {
    if (j.empty()) {
      out << "[]";
      return;
    }
    out << "[\n";
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (i) out << ",\n";
      out << pad;
      dump_json(out, j[i], indent + 2);
    }
    out << '\n' << close << ']';
  } else if (j.is_number_float()) {
    const double v = j.get<double>();
    if (!std::isfinite(v)) {
      out << "null";
    } else {
      std::string s = fmt(v);
      if (s.find_first_of(".eE") == std::string::npos) s += ".0";
      out << s;
    }
  } else {
    out << j.dump();
  }
}

}  // namespace detail

/// Pretty JSON with every float printed as %.17g.
inline std::string dump_json(const json& j) {
  std::ostringstream out;
  detail::dump_json(out, j, 0);
  return out.str();
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << dump_json(j) << '\n';
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

struct LabelsFile {
  std::vector<std::string> subject_ids;
  std::vector<int> labels;
};

inline LabelsFile read_labels(const fs::path& path) {
  const CsvTable t = read_csv(path);
  if (t.header.size() < 2) throw DataError(path.string() + ": expected subject_id,hard_label,...");
  LabelsFile out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    out.subject_ids.push_back(t.rows[r][0]);
    out.labels.push_back(detail::parse_int(t.rows[r][1], path.string() + " line " + std::to_string(t.lines[r])));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Grids

/// One row per lattice node: coordinates then value.
inline void write_grid_csv(const fs::path& path, const SurfaceGrid& g) {
  CsvWriter w(path);
  std::vector<std::string> head;
  for (int h = 0; h < g.dims(); ++h) head.push_back("x" + std::to_string(h + 1));
  head.push_back(to_string(g.kind));
  w.row(head);
  for (std::size_t f = 0; f < g.size(); ++f) {
    std::vector<std::string> row;
    for (const double v : g.point(f)) row.push_back(fmt(v));
    row.push_back(fmt(g.values[f]));
    w.row(row);
  }
}

/// 8-bit binary PGM of a 2D grid (first axis to the right, second axis up),
/// scaled to the grid maximum (prob grids to [0, 1]).
inline void write_pgm(const fs::path& path, const SurfaceGrid& g) {
  if (g.dims() != 2) throw ConfigError("pgm: needs a 2D grid");
  const std::size_t nx = g.axes[0].size(), ny = g.axes[1].size();
  double top = 1.0;
  if (g.kind != SurfaceKind::prob) {
    top = 0.0;
    for (const double v : g.values) top = std::max(top, v);
    if (!(top > 0.0)) top = 1.0;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << nx << ' ' << ny << "\n255\n";
  for (std::size_t r = 0; r < ny; ++r) {
    const std::size_t iy = ny - 1 - r;
    for (std::size_t ix = 0; ix < nx; ++ix) {
      const double v = std::clamp(g.values[ix * ny + iy] / top, 0.0, 1.0);
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v))));
    }
  }
}

}  // namespace dpmppp::io
