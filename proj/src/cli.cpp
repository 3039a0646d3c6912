#include "eigavg/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <unistd.h>

#include <CLI11.hpp>

#include "eigavg/errors.hpp"
#include "eigavg/experiments.hpp"
#include "eigavg/tubes.hpp"

#ifndef EIGAVG_VERSION
#define EIGAVG_VERSION "unknown"
#endif

namespace eigavg {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') quoted = !quoted;
    else if (ch == ',' && !quoted) out.emplace_back();
    else out.back() += ch;
  }
  return out;
}

std::optional<double> number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) return std::nullopt;
  return v;
}

bool close(double a, double b, double tol) {
  if (a == b || (std::isnan(a) && std::isnan(b))) return true;
  return std::abs(a - b) <= tol * std::max({std::abs(a), std::abs(b), 1e-300});
}

double tolerance(const ExperimentInfo& info, const std::string& column) {
  auto it = info.tolerances.find(column);
  if (it == info.tolerances.end()) it = info.tolerances.find("*");
  return it == info.tolerances.end() ? 0.0 : it->second;
}

void compare_csv(const ExperimentInfo& info, const fs::path& a, const fs::path& b,
                 const std::string& name, CompareReport& rep) {
  std::ifstream fa(a), fb(b);
  std::string la, lb;
  std::getline(fa, la);
  std::getline(fb, lb);
  if (la != lb) {
    rep.equivalent = false;
    rep.lines.push_back(name + ": header differs");
    return;
  }
  const auto header = split_csv(la);
  int row = 0, worst_col = -1;
  double worst = 0.0;
  bool differs = false;
  while (true) {
    const bool ga = static_cast<bool>(std::getline(fa, la)), gb = static_cast<bool>(std::getline(fb, lb));
    if (!ga && !gb) break;
    ++row;
    if (ga != gb) {
      rep.equivalent = false;
      rep.lines.push_back(name + ": row counts differ");
      return;
    }
    const auto ca = split_csv(la), cb = split_csv(lb);
    if (ca.size() != cb.size()) {
      rep.equivalent = false;
      rep.lines.push_back(name + ": row " + std::to_string(row) + " has a different width");
      return;
    }
    for (std::size_t k = 0; k < ca.size(); ++k) {
      if (ca[k] == cb[k]) continue;
      const std::string col = k < header.size() ? header[k] : std::to_string(k);
      const auto va = number(ca[k]), vb = number(cb[k]);
      if (!va || !vb) {
        differs = true;
        rep.lines.push_back(name + ": row " + std::to_string(row) + " column " + col + ": " + ca[k] +
                            " vs " + cb[k]);
        continue;
      }
      const double rel = std::abs(*va - *vb) / std::max({std::abs(*va), std::abs(*vb), 1e-300});
      if (rel > worst) worst = rel, worst_col = static_cast<int>(k);
      if (!close(*va, *vb, tolerance(info, col))) {
        differs = true;
        rep.lines.push_back(name + ": row " + std::to_string(row) + " column " + col + ": " + ca[k] +
                            " vs " + cb[k]);
      }
    }
  }
  if (differs) rep.equivalent = false;
  std::ostringstream s;
  s << name << ": largest relative change " << worst
    << (worst_col >= 0 ? " in column " + header.at(std::min<std::size_t>(worst_col, header.size() - 1)) : "")
    << (differs ? " (beyond tolerance)" : " (within tolerance)");
  rep.lines.push_back(s.str());
}

void compare_summary(const json& a, const json& b, const std::string& path, double tol,
                     CompareReport& rep) {
  if (a.is_number() && b.is_number()) {
    if (!close(a.get<double>(), b.get<double>(), tol)) {
      rep.equivalent = false;
      rep.lines.push_back("summary " + path + ": " + a.dump() + " vs " + b.dump());
    }
    return;
  }
  if (a.type() != b.type() || (!a.is_object() && !a.is_array() && a != b)) {
    rep.equivalent = false;
    rep.lines.push_back("summary " + path + ": " + a.dump() + " vs " + b.dump());
    return;
  }
  if (a.is_object()) {
    std::set<std::string> keys;
    for (const auto& [k, v] : a.items()) keys.insert(k);
    for (const auto& [k, v] : b.items()) keys.insert(k);
    for (const auto& k : keys) {
      const std::string p = path.empty() ? k : path + "." + k;
      if (!a.contains(k) || !b.contains(k)) {
        rep.equivalent = false;
        rep.lines.push_back("summary " + p + ": present on one side only");
      } else {
        compare_summary(a.at(k), b.at(k), p, tol, rep);
      }
    }
  } else if (a.is_array()) {
    if (a.size() != b.size()) {
      rep.equivalent = false;
      rep.lines.push_back("summary " + path + ": lengths differ");
      return;
    }
    for (std::size_t i = 0; i < a.size(); ++i)
      compare_summary(a[i], b[i], path + "[" + std::to_string(i) + "]", tol, rep);
  }
}

fs::path manifest_path(const fs::path& p) {
  return fs::is_directory(p) ? p / "manifest.json" : p;
}

}  // namespace

std::string code_version() { return EIGAVG_VERSION; }

std::string config_hash(const nlohmann::json& cfg) {
  json c = cfg;
  c.erase("output_dir");
  const std::string text = c.dump();
  return hex16(fnv1a(text.data(), text.size()));
}

std::string file_checksum(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();
  return hex16(fnv1a(bytes.data(), bytes.size()));
}

json RunManifest::to_json() const {
  return {{"experiment", experiment},   {"schema_version", schema_version},
          {"config_hash", config_hash}, {"code_version", code_version},
          {"checksums", checksums},     {"wall_time_s", wall_time},
          {"warnings", warnings},       {"failures", failures},
          {"summary", summary},         {"config", config}};
}

RunManifest RunManifest::from_json(const json& j) {
  try {
    RunManifest m;
    m.experiment = j.at("experiment");
    m.schema_version = j.at("schema_version");
    m.config_hash = j.at("config_hash");
    m.code_version = j.at("code_version");
    m.checksums = j.at("checksums").get<std::map<std::string, std::string>>();
    m.wall_time = j.at("wall_time_s");
    m.warnings = j.at("warnings").get<std::vector<std::string>>();
    m.failures = j.at("failures").get<std::vector<std::string>>();
    m.summary = j.at("summary");
    m.config = j.at("config");
    return m;
  } catch (const json::exception& e) {
    throw Error(std::string("malformed manifest: ") + e.what());
  }
}

json load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

RunManifest run_experiment(const json& raw, const std::optional<fs::path>& output_dir) {
  const json cfg = validate_config(raw);
  const fs::path target = fs::absolute(output_dir ? *output_dir : fs::path(cfg.at("output_dir").get<std::string>()));
  if (fs::exists(target) &&
      !(fs::is_directory(target) && (fs::is_empty(target) || fs::exists(target / "manifest.json"))))
    throw Error("refusing to replace " + target.string() + ": not a previous run directory");

  fs::create_directories(target.parent_path());
  const fs::path stage =
      target.parent_path() / ("." + target.filename().string() + ".staging-" + std::to_string(::getpid()));
  fs::remove_all(stage);
  fs::create_directory(stage);

  RunManifest m;
  try {
    const auto start = std::chrono::steady_clock::now();
    const ExperimentResult res = run_pipeline(cfg, stage);
    m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    m.experiment = cfg.at("experiment");
    m.schema_version = kSchemaVersion;
    m.config_hash = config_hash(cfg);
    m.code_version = code_version();
    for (const auto& f : res.files) m.checksums[f] = file_checksum(stage / f);
    m.warnings = res.warnings;
    m.failures = res.failures;
    m.summary = res.summary;
    m.config = cfg;
    std::ofstream out(stage / "manifest.json");
    out << m.to_json().dump(2) << '\n';
    if (!out) throw Error("cannot write manifest");
  } catch (...) {
    std::error_code ec;
    fs::remove_all(stage, ec);
    throw;
  }
  fs::remove_all(target);
  fs::rename(stage, target);
  return m;
}

RunManifest read_manifest(const fs::path& path) {
  const fs::path p = manifest_path(path);
  std::ifstream in(p);
  if (!in) throw Error("cannot open manifest " + p.string());
  try {
    return RunManifest::from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw Error("manifest " + p.string() + " is not valid JSON: " + e.what());
  }
}

CompareReport compare_manifests(const fs::path& a, const fs::path& b) {
  const RunManifest ma = read_manifest(a), mb = read_manifest(b);
  if (ma.experiment != mb.experiment)
    throw SchemaMismatch("manifests belong to different experiments: " + ma.experiment + " vs " +
                         mb.experiment);
  if (ma.schema_version != mb.schema_version)
    throw SchemaMismatch("manifests use different schema versions");
  const ExperimentInfo& info = experiment_info(ma.experiment);
  const fs::path da = manifest_path(a).parent_path(), db = manifest_path(b).parent_path();

  CompareReport rep;
  if (ma.config_hash != mb.config_hash) {
    rep.equivalent = false;
    rep.lines.push_back("config_hash: " + ma.config_hash + " vs " + mb.config_hash);
  }
  if (ma.code_version != mb.code_version)
    rep.lines.push_back("code_version: " + ma.code_version + " vs " + mb.code_version);
  if (ma.failures != mb.failures) {
    rep.equivalent = false;
    rep.lines.push_back("failures differ");
  }

  std::set<std::string> names;
  for (const auto& [f, c] : ma.checksums) names.insert(f);
  for (const auto& [f, c] : mb.checksums) names.insert(f);
  for (const auto& f : names) {
    const auto ia = ma.checksums.find(f), ib = mb.checksums.find(f);
    if (ia == ma.checksums.end() || ib == mb.checksums.end()) {
      rep.equivalent = false;
      rep.lines.push_back(f + ": present in one run only");
    } else if (ia->second == ib->second) {
      rep.lines.push_back(f + ": checksum identical");
    } else if (f.size() > 4 && f.ends_with(".csv") && fs::exists(da / f) && fs::exists(db / f)) {
      compare_csv(info, da / f, db / f, f, rep);
    } else {
      rep.equivalent = false;
      rep.lines.push_back(f + ": checksum " + ia->second + " vs " + ib->second);
    }
  }
  compare_summary(ma.summary, mb.summary, "", tolerance(info, "*"), rep);
  return rep;
}

int cli_main(int argc, char** argv) {
  CLI::App app{"Eigenfunction average experiments"};
  app.require_subcommand(1);
  std::string config, out_dir, a, b;
  auto* run = app.add_subcommand("run", "run the experiment described by a config file");
  run->add_option("config", config, "config path")->required();
  run->add_option("-o,--output-dir", out_dir, "override output_dir");
  auto* cmp = app.add_subcommand("compare", "diff two run manifests");
  cmp->add_option("a", a, "manifest or run directory")->required();
  cmp->add_option("b", b, "manifest or run directory")->required();
  auto* list = app.add_subcommand("list-experiments", "print the experiment names");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (list->parsed()) {
      for (const auto& e : experiment_catalog()) std::cout << e.name << "  " << e.description << '\n';
      return 0;
    }
    if (run->parsed()) {
      const json raw = load_config(config);
      const RunManifest m =
          run_experiment(raw, out_dir.empty() ? std::nullopt : std::optional<fs::path>(out_dir));
      std::cout << m.experiment << ": " << m.checksums.size() << " files, " << m.wall_time << " s\n"
                << m.summary.dump(2) << '\n';
      for (const auto& w : m.warnings) std::cerr << "warning: " << w << '\n';
      for (const auto& f : m.failures) std::cerr << "assertion failed: " << f << '\n';
      return m.failures.empty() ? 0 : 2;
    }
    const CompareReport rep = compare_manifests(a, b);
    for (const auto& l : rep.lines) std::cout << l << '\n';
    std::cout << (rep.equivalent ? "equivalent" : "different") << '\n';
    return rep.equivalent ? 0 : 2;
  } catch (const AssertionFailure& e) {
    std::cerr << "assertion failed: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace eigavg
