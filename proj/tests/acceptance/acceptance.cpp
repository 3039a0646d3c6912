// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>

#include <unistd.h>

#include "eigavg/cli.hpp"

using json = nlohmann::json;
namespace fs = std::filesystem;
using eigavg::RunManifest;

namespace {

constexpr double kPi = std::numbers::pi;

fs::path g_root;

RunManifest run(const std::string& tag, json cfg) {
  cfg["schema_version"] = 1;
  return eigavg::run_experiment(cfg, g_root / tag);
}

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
  void require_clean(const RunManifest& m) {
    for (const auto& f : m.failures) check(false, f);
  }
};

double num(const json& j) { return j.is_number() ? j.get<double>() : std::nan(""); }

struct Criterion {
  int id;
  std::string name;
  double limit_s;
  std::function<void(Verdict&)> body;
};

void zonal(Verdict& v) {
  const RunManifest m = run("c01", {{"experiment", "zonal_sup"},
                                    {"mode", "zonal"},
                                    {"l_list", {20, 40, 80, 160, 240, 320, 400}}});
  const double p = num(m.summary["exponent"]);
  v.detail << "exponent " << p << " (target -0.5 +- 0.05)";
  v.check(std::abs(p + 0.5) <= 0.05, "exponent");
  v.require_clean(m);
}

void highest_weight(Verdict& v) {
  const RunManifest m = run("c02", {{"experiment", "zonal_sup"},
                                    {"mode", "highest_weight"},
                                    {"l_list", {50, 100, 200, 400, 800}}});
  const double p = num(m.summary["exponent"]);
  v.detail << "exponent " << p << " (target -0.25 +- 0.05)";
  v.check(std::abs(p + 0.25) <= 0.05, "exponent");
  v.require_clean(m);
}

void beam(Verdict& v) {
  const RunManifest m = run("c03", {{"experiment", "beam_restriction"},
                                    {"h_list", {1e-2, 1e-3, 1e-4}},
                                    {"oblique_angle_deg", 45.0},
                                    {"oblique_h", 1e-3}});
  const double rel = num(m.summary["max_rel_error"]), ob = num(m.summary["oblique_abs"]);
  v.detail << "normal rel error " << rel << " (<= 1e-6), 45 deg |I| " << ob << " (< 1e-15)";
  v.check(rel <= 1e-6, "normal crossing");
  v.check(ob < std::pow(1e-3, 5), "oblique crossing");
  v.require_clean(m);
}

void lattice(Verdict& v) {
  const RunManifest m = run("c04", {{"experiment", "torus_average"}, {"mode", "lattice"}});
  const double dev = num(m.summary["max_deviation"]);
  v.detail << "max |avg - [m1 = 0]| " << dev << " (<= 1e-10)";
  v.check(dev <= 1e-10, "deviation");
  v.require_clean(m);
}

void equator(Verdict& v) {
  const RunManifest m = run("c05", {{"experiment", "torus_average"},
                                    {"mode", "zonal_equator"},
                                    {"l_list", {20, 40, 64, 100, 160, 250, 320, 400}},
                                    {"factor", 2.0}});
  const double lo = num(m.summary["min_ratio"]), hi = num(m.summary["max_ratio"]);
  v.detail << "|avg| / scale in [" << lo << ", " << hi << "] (inside [0.5, 2])";
  v.check(lo >= 0.5 && hi <= 2.0, "ratio range");
  v.require_clean(m);
}

void returns(Verdict& v) {
  const RunManifest m = run("c06", {{"experiment", "sphere_returns"},
                                    {"cases", {"sphere_point", "sphere_equator", "torus_vertical"}},
                                    {"tolerance", 1e-6},
                                    {"ladder", {{"enabled", false}}}});
  const std::map<std::string, double> expected{
      {"sphere_point", 2 * kPi}, {"sphere_equator", kPi}, {"torus_vertical", 1.0}};
  for (const auto& [name, T] : expected) {
    const json& c = m.summary["cases"][name];
    const double err = num(c["max_error"]);
    v.detail << name << " |T_H - " << T << "| " << err << "; ";
    v.check(std::abs(num(c["expected_T"]) - T) == 0.0 && err <= 1e-6, name + " T_H");
    v.check(num(c["bin_defect"]) <= num(c["bin_tolerance"]), name + " bins");
  }
  v.require_clean(m);
}

void conjugacy(Verdict& v) {
  const RunManifest m = run("c07", {{"experiment", "conjugacy"}, {"events", 6}});
  const double err = num(m.summary["max_event_error"]), w = num(m.summary["sphere_witness_t"]);
  v.detail << "event error " << err << ", sphere witness t " << w << ", flat events "
           << m.summary["flat_events"];
  v.check(err <= 1e-6 && m.summary["event_counts_ok"] == true, "sphere events");
  v.check(m.summary["flat_events"] == 0, "flat events");
  v.check(m.summary["sphere_holds"] == false && std::abs(w - 2 * kPi) < 1e-2, "sphere certificate");
  v.check(m.summary["flat_holds"] == true, "flat certificate");
  v.require_clean(m);
}

void contraction(Verdict& v) {
  const RunManifest m = run("c08", {{"experiment", "catmap_contraction"}});
  const double res = num(m.summary["sigma_B"]) / num(m.summary["sigma_A0"]);
  const double q = num(m.summary["q"]);
  v.detail << "residual " << res << " (<= 0.05), q " << q << " (-0.5 +- 0.1)";
  v.check(m.summary["reverified"] == true, "re-verification");
  v.check(res <= 0.05, "residual");
  const auto ladder = m.summary["ladder"].get<std::vector<double>>();
  for (std::size_t i = 1; i < ladder.size(); ++i) v.check(ladder[i] < ladder[i - 1], "ladder order");
  v.check(std::abs(q + 0.5) <= 0.1, "log exponent");
  v.require_clean(m);
}

void algebra(Verdict& v) {
  const RunManifest m = run("c09", {{"experiment", "cover_partition"},
                                    {"R_exponents", {3, 4, 5, 6, 7, 8}},
                                    {"trials", 1000}});
  const double dev = num(m.summary["identity_deviation"]);
  v.detail << "R spread " << dev << " (<= 1e-12), violations " << m.summary["violations"] << " of "
           << m.summary["trials"] << " trials";
  v.check(dev <= 1e-12, "exponent identity");
  v.check(m.summary["violations"] == 0 && m.summary["trials"] == 1000, "monotonicity");
  v.require_clean(m);
}

void thicken(Verdict& v) {
  const RunManifest m = run("c10", {{"experiment", "mu_thicken"}, {"liouville_count", 1000000}});
  const double z = num(m.summary["max_sigmas"]), rel = num(m.summary["max_orbit_rel_error"]);
  v.detail << "Liouville " << z << " sigma (<= 3), orbit rel error " << rel << " (<= 0.02)";
  v.check(z <= 3.0, "Liouville");
  v.check(rel <= 0.02, "periodic orbit");
  v.require_clean(m);
}

void masses(Verdict& v) {
  const RunManifest m = run("c11", {{"experiment", "tube_mass"}, {"N", 2048}});
  const json& s = m.summary;
  const double avg = num(s["time_average"]), bound = num(s["average_bound"]);
  const double cover = num(s["cover_ratio"]), group = num(s["group_ratio"]);
  v.detail << "time average " << avg << " <= " << bound << ", cover mass " << cover << " in [0.5, "
           << s["colors"] << "], group ratio " << group << " (<= 1.5), h " << num(s["h"]);
  v.check(avg <= 0.46 / 0.54 * (1 + 1e-2), "time average");
  v.check(cover >= 0.5 && cover <= num(s["colors"]), "cover mass");
  v.check(group <= 1.5, "group ratio");
  v.check(num(s["h"]) <= 1e-3 && s["N"] == 2048, "regime");
  v.require_clean(m);
}

void ladder(Verdict& v) {
  const RunManifest m = run("c12", {{"experiment", "sphere_returns"},
                                    {"cases", json::array()},
                                    {"ladder",
                                     {{"enabled", true},
                                      {"T_list", {5.0, 10.0, 20.0}},
                                      {"S_list", {10.0, 100.0, 1000.0}}}}});
  const json& l = m.summary["ladder"];
  const auto limits = l["limits"].get<std::vector<double>>();
  v.detail << "inversions " << l["inversions"] << ", N-limit per T";
  for (double x : limits) v.detail << ' ' << x;
  v.check(l["conclusive"] == true, "conclusive");
  v.check(l["inversions"] == 0, "inversions");
  v.check(limits.size() == 3, "ladder length");
  v.require_clean(m);
}

}  // namespace

int main() {
  g_root = fs::temp_directory_path() / ("eigavg-acceptance-" + std::to_string(::getpid()));
  fs::create_directories(g_root);
  const std::vector<Criterion> all{
      {1, "zonal sup-norm scaling", 60, zonal},
      {2, "highest weight scaling", 120, highest_weight},
      {3, "beam restriction", 30, beam},
      {4, "lattice average dichotomy", 10, lattice},
      {5, "zonal equator saturation", 60, equator},
      {6, "return dynamics", 120, returns},
      {7, "conjugate points", 60, conjugacy},
      {8, "contraction mechanism", 120, contraction},
      {9, "bracket algebra", 10, algebra},
      {10, "mu_H thickening", 120, thicken},
      {11, "quantized tube masses", 300, masses},
      {12, "recurrence decomposition ladder", 180, ladder},
  };
  int failed = 0;
  for (const auto& c : all) {
    Verdict v;
    const auto start = std::chrono::steady_clock::now();
    try {
      c.body(v);
    } catch (const std::exception& e) {
      v.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    v.check(secs < c.limit_s, "runtime");
    failed += !v.pass;
    char head[96];
    std::snprintf(head, sizeof head, "%s %2d %-32s %7.1f s / %3.0f s  ", v.pass ? "PASS" : "FAIL", c.id,
                  c.name.c_str(), secs, c.limit_s);
    std::cout << head << v.detail.str() << std::endl;
  }
  std::error_code ec;
  fs::remove_all(g_root, ec);
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : "all criteria passed") << std::endl;
  return failed ? 1 : 0;
}
