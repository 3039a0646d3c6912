#include "eigavg/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "eigavg/bounds.hpp"
#include "eigavg/catmap.hpp"
#include "eigavg/eigenmodes.hpp"
#include "eigavg/errors.hpp"
#include "eigavg/parallel.hpp"
#include "eigavg/quantize.hpp"
#include "eigavg/returns.hpp"
#include "eigavg/tubes.hpp"

namespace eigavg {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;
constexpr double kPi = std::numbers::pi;

json common(const std::string& name) {
  return {{"schema_version", kSchemaVersion},
          {"experiment", name},
          {"seed", 1},
          {"output_dir", "out/" + name}};
}

json with_common(const std::string& name, json extra) {
  json j = common(name);
  j.update(extra);
  return j;
}

std::vector<ExperimentInfo> build_catalog() {
  std::vector<ExperimentInfo> c;
  c.push_back({"zonal_sup", "sup-norm ratio sweep of zonal or highest weight harmonics with a power-law fit",
               with_common("zonal_sup", {{"mode", "zonal"},
                                         {"l_list", nullptr},
                                         {"grid_density", 8.0},
                                         {"expected_exponent", nullptr},
                                         {"exponent_tolerance", 0.05}}),
               {{"*", 1e-12}}});
  c.push_back({"beam_restriction", "Gaussian beam restricted to normal and oblique lines",
               with_common("beam_restriction", {{"h_list", {1e-2, 1e-3, 1e-4}},
                                                {"oblique_angle_deg", 45.0},
                                                {"oblique_h", 1e-3},
                                                {"rel_tolerance", 1e-6}}),
               {{"*", 1e-12}}});
  c.push_back({"torus_average", "averages of lattice modes over a torus line or zonal modes over the equator",
               with_common("torus_average",
                           {{"mode", "lattice"},
                            {"modes", {{0, 1}, {0, 4}, {0, -9}, {1, 0}, {3, 7}, {-5, 2}, {2, -1}, {40, 3}}},
                            {"l_list", {20, 21, 40, 64, 100, 101, 160, 250, 400}},
                            {"quad_refine", 2},
                            {"tolerance", 1e-10},
                            {"factor", 2.0}}),
               {{"*", 1e-12}, {"err_estimate", 1e-6}}});
  c.push_back({"sphere_returns", "first returns to SN*H, return-map invariance and the recurrence ladder",
               with_common("sphere_returns",
                           {{"cases", {"sphere_point", "sphere_equator", "torus_vertical"}},
                            {"prox_tol", 1e-2},
                            {"T_max", 8.0},
                            {"density", 8.0},
                            {"tolerance", 1e-6},
                            {"bins", 8},
                            {"ladder",
                             {{"enabled", true},
                              {"density", 16.0},
                              {"balls", 8},
                              {"T_list", {5.0, 10.0, 20.0}},
                              {"S_list", {10.0, 100.0, 1000.0}},
                              {"horizon", 80.0}}}}),
               {{"*", 1e-9}}});
  c.push_back({"cover_partition", "tube cover of a torus line, window certificate and bracket algebra",
               with_common("cover_partition", {{"tau", 0.1},
                                               {"R", 0.05},
                                               {"density", 200.0},
                                               {"t0", 0.4},
                                               {"T", 0.6},
                                               {"count_constant", 3},
                                               {"R_exponents", {3, 4, 5, 6, 7, 8}},
                                               {"trials", 1000},
                                               {"identity_tolerance", 1e-12}}),
               {{"*", 1e-12}}});
  c.push_back({"catmap_contraction", "contraction partition of a stable rectangle under the cat map",
               with_common("catmap_contraction",
                           {{"rect_length", 0.1},
                            {"rect_width", 0.02},
                            {"t0", 2},
                            {"T", 16},
                            {"eps", 0.05},
                            {"grid", 4096},
                            {"shrink", 1.2},
                            {"alpha", 0.4},
                            {"delta", 0.3},
                            {"T_ladder", {4, 6, 8, 11}},
                            {"ladder_h", 1e-12},
                            {"h_sweep", {1e-8, 1e-12, 1e-16, 1e-24, 1e-32}},
                            {"q_expected", -0.5},
                            {"q_tolerance", 0.1},
                            {"residual_max", 0.05}}),
               {{"*", 1e-12}}});
  c.push_back({"tube_mass", "quantized tube cutoffs, time-averaged symbols and masses of a torus mode",
               with_common("tube_mass", {{"N", 2048},
                                         {"mode", {0, 256}},
                                         {"delta", 0.49},
                                         {"R", 0.135},
                                         {"density", 400.0},
                                         {"group", {{"tau", 0.02}, {"t0", 0.46}, {"T", 0.54}}},
                                         {"cover_tau", 0.3},
                                         {"cutoff_nx", 256},
                                         {"cutoff_ntheta", 1024},
                                         {"average_steps", 200},
                                         {"average_tolerance", 1e-2},
                                         {"group_ratio_max", 1.5},
                                         {"cover_ratio_min", 0.5},
                                         {"write_grid", false}}),
               {{"*", 1e-10}}});
  c.push_back({"conjugacy", "conjugate points along geodesics and conjugacy certificates",
               with_common("conjugacy", {{"seeds", 6},
                                         {"events", 6},
                                         {"r", 0.1},
                                         {"tolerance", 1e-6},
                                         {"torus_t_end", 50.0},
                                         {"sphere_T", 5.0},
                                         {"torus_T", 3.0},
                                         {"a", 1.0},
                                         {"witness_tolerance", 1e-2}}),
               {{"*", 1e-9}}});
  c.push_back({"mu_thicken", "mu_H by thickening Liouville and periodic-orbit measures",
               with_common("mu_thicken", {{"liouville_count", 1000000},
                                          {"deltas", {0.04, 0.02, 0.01}},
                                          {"sigma_factor", 3.0},
                                          {"reference_density", 20000.0},
                                          {"orbit_count", 20000},
                                          {"orbit_deltas", {0.05, 0.025, 0.0125}},
                                          {"orbit_tolerance", 0.02}}),
               {{"*", 1e-12}}});
  return c;
}

bool same_kind(const json& def, const json& v) {
  if (def.is_null()) return v.is_null() || v.is_number() || v.is_array();
  if (def.is_number()) return v.is_number() && (!def.is_number_integer() || v.is_number_integer());
  if (def.is_array()) {
    if (!v.is_array()) return false;
    if (def.empty()) return true;
    for (const json& e : v)
      if (!same_kind(def.front(), e)) return false;
    return true;
  }
  return def.type() == v.type();
}

void overlay(json& target, const json& given, const std::string& path) {
  if (!given.is_object()) throw ConfigError(path + " must be an object");
  for (const auto& [key, value] : given.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!target.contains(key)) throw ConfigError("unknown key " + where);
    json& slot = target[key];
    if (slot.is_object()) {
      overlay(slot, value, where);
    } else if (!same_kind(slot, value)) {
      throw ConfigError("wrong type for " + where);
    } else {
      slot = value;
    }
  }
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

struct Sink {
  fs::path dir;
  ExperimentResult& res;

  std::ofstream open(const std::string& name) {
    res.files.push_back(name);
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw Error("cannot write " + (dir / name).string());
    out << std::setprecision(17);
    return out;
  }
  void expect(bool ok, const std::string& what) {
    if (!ok) res.failures.push_back(what);
  }
};

void write_fit(Sink& s, const ScalingFit& fit) {
  auto out = s.open("fit.csv");
  out << "model,exponent,log_correction,prefactor,residual,points\n"
      << (fit.model == FitModel::PowerLaw ? "power_law" : "power_times_log") << ',' << fit.exponent
      << ',' << fit.log_correction << ',' << fit.prefactor << ',' << fit.residual << ','
      << fit.pairs.size() << '\n';
}

Submanifold torus_line(const Eigen::Vector2d& direction) {
  return Submanifold::closed_geodesic(ManifoldModel::flat_torus(),
                                      {Eigen::Vector2d::Zero(), direction, 0}, 1.0);
}

Submanifold sphere_equator() {
  return Submanifold::closed_geodesic(ManifoldModel::sphere(),
                                      {Eigen::Vector2d(kPi / 2, 0), Eigen::Vector2d(0, 1), 0},
                                      2 * kPi);
}

// ---------------------------------------------------------------------------

void zonal_sup(const json& c, Sink& s) {
  const std::string mode = c.at("mode");
  if (mode != "zonal" && mode != "highest_weight")
    throw ConfigError("mode must be zonal or highest_weight");
  const bool hw = mode == "highest_weight";
  const std::vector<int> ls = c.at("l_list").is_null()
                                  ? (hw ? std::vector<int>{50, 100, 200, 400, 800}
                                        : std::vector<int>{20, 40, 80, 160, 240, 320, 400})
                                  : c.at("l_list").get<std::vector<int>>();
  const double expected =
      c.at("expected_exponent").is_null() ? (hw ? -0.25 : -0.5) : c.at("expected_exponent").get<double>();
  const double density = c.at("grid_density");

  auto out = s.open("sweep.csv");
  write_sweep_csv_header(out);
  std::vector<std::pair<double, double>> pairs;
  for (int l : ls) {
    const EigenmodeSpec spec = hw ? EigenmodeSpec::highest_weight(l) : EigenmodeSpec::zonal(l);
    const double ratio = sup_ratio(spec, density);
    pairs.emplace_back(spec.h, ratio);
    write_sweep_csv_row(out, {to_string(spec.kind), spec.label(), spec.h, ratio, 0.0});
  }
  const ScalingFit fit = scaling_fit(pairs, FitModel::PowerLaw);
  write_fit(s, fit);
  s.res.summary = {{"mode", mode}, {"exponent", fit.exponent}, {"expected", expected},
                   {"residual", fit.residual}, {"points", pairs.size()}};
  s.expect(std::abs(fit.exponent - expected) <= c.at("exponent_tolerance").get<double>(),
           "sup exponent " + fmt(fit.exponent) + " outside " + fmt(expected) + " +- tolerance");
}

void beam(const json& c, Sink& s) {
  const auto hs = c.at("h_list").get<std::vector<double>>();
  const double tol = c.at("rel_tolerance");
  const double deg = c.at("oblique_angle_deg");
  const double h_ob = c.at("oblique_h");

  auto out = s.open("sweep.csv");
  write_sweep_csv_header(out);
  std::vector<std::pair<double, double>> pairs;
  double worst = 0.0;
  for (double h : hs) {
    const Complex v = beam_restriction(h, kPi / 2);
    const double exact = std::sqrt(2 * kPi) * std::pow(h, 0.25);
    const double rel = std::abs(v - exact) / exact;
    worst = std::max(worst, rel);
    pairs.emplace_back(h, std::abs(v));
    write_sweep_csv_row(out, {"beam_normal", "90", h, v, rel});
  }
  const Complex ob = beam_restriction(h_ob, deg * kPi / 180);
  const double bound = std::pow(h_ob, 5);
  write_sweep_csv_row(out, {"beam_oblique", fmt(deg), h_ob, ob, 0.0});

  double exponent = 0.0;
  if (pairs.size() >= 4) {
    const ScalingFit fit = scaling_fit(pairs, FitModel::PowerLaw);
    write_fit(s, fit);
    exponent = fit.exponent;
  } else if (pairs.size() >= 2) {
    exponent = std::log(pairs.back().second / pairs.front().second) /
               std::log(pairs.back().first / pairs.front().first);
  }
  s.res.summary = {{"max_rel_error", worst}, {"exponent", exponent},
                   {"oblique_abs", std::abs(ob)}, {"oblique_bound", bound}};
  s.expect(worst <= tol, "normal crossing relative error " + fmt(worst));
  s.expect(std::abs(ob) < bound, "oblique crossing " + fmt(std::abs(ob)) + " not below h^5");
}

void torus_average(const json& c, Sink& s) {
  const std::string mode = c.at("mode");
  const int refine = c.at("quad_refine");
  const double tol = c.at("tolerance");
  auto out = s.open("sweep.csv");
  write_sweep_csv_header(out);

  if (mode == "lattice") {
    const Submanifold H = torus_line(Eigen::Vector2d(1, 0));
    double worst = 0.0;
    for (const auto& m : c.at("modes")) {
      if (m.size() != 2) throw ConfigError("modes entries are integer pairs");
      const EigenmodeSpec spec = EigenmodeSpec::torus_mode({m[0].get<int>(), m[1].get<int>()});
      const AverageResult r = average_over(H, spec, refine);
      const double expected = spec.m(0) == 0 ? 1.0 : 0.0;
      worst = std::max(worst, std::abs(r.value - expected));
      write_sweep_csv_row(out, {to_string(spec.kind), spec.label(), spec.h, r.value, r.error});
    }
    s.res.summary = {{"mode", mode}, {"max_deviation", worst}};
    s.expect(worst <= tol, "lattice average deviates by " + fmt(worst));
  } else if (mode == "zonal_equator") {
    const Submanifold H = sphere_equator();
    const double factor = c.at("factor");
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0, odd = 0.0;
    std::vector<std::pair<double, double>> pairs;
    for (int l : c.at("l_list").get<std::vector<int>>()) {
      const EigenmodeSpec spec = EigenmodeSpec::zonal(l);
      const AverageResult r = average_over(H, spec, refine);
      write_sweep_csv_row(out, {to_string(spec.kind), spec.label(), spec.h, r.value, r.error});
      if (l % 2) {
        odd = std::max(odd, std::abs(r.value));
        continue;
      }
      const double scale = 2 * kPi * std::sqrt((2.0 * l + 1) / (4 * kPi)) * std::sqrt(2.0 / (kPi * l));
      const double ratio = std::abs(r.value) / scale;
      lo = std::min(lo, ratio);
      hi = std::max(hi, ratio);
      pairs.emplace_back(spec.h, std::abs(r.value));
    }
    if (pairs.empty()) throw ConfigError("l_list needs even degrees");
    s.res.summary = {{"mode", mode}, {"min_ratio", lo}, {"max_ratio", hi}, {"max_odd", odd}};
    if (pairs.size() >= 4) {
      const ScalingFit fit = scaling_fit(pairs, FitModel::PowerLaw);
      write_fit(s, fit);
      s.res.summary["exponent"] = fit.exponent;
    }
    s.expect(lo >= 1.0 / factor && hi <= factor,
             "equator average ratio range [" + fmt(lo) + ", " + fmt(hi) + "]");
    s.expect(odd <= tol, "odd degree average " + fmt(odd));
  } else {
    throw ConfigError("mode must be lattice or zonal_equator");
  }
}

struct ReturnCase {
  Submanifold H;
  double period;
};

ReturnCase return_case(const std::string& name) {
  if (name == "sphere_point")
    return {Submanifold::point(ManifoldModel::sphere(), {Eigen::Vector2d(1.0, 0.5), 0}), 2 * kPi};
  if (name == "sphere_equator") return {sphere_equator(), kPi};
  if (name == "torus_vertical") return {torus_line(Eigen::Vector2d(0, 1)), 1.0};
  throw ConfigError("unknown return case " + name);
}

void returns_ladder(const json& c, const ReturnOptions& ropts, Sink& s) {
  const Submanifold H =
      Submanifold::point(ManifoldModel::flat_torus(), {Eigen::Vector2d(0.5, 0.5), 0});
  const auto samples = sample_conormal(H, c.at("density").get<double>());
  const int nballs = c.at("balls");
  std::vector<ConormalBall> balls;
  for (int i = 0; i < nballs; ++i)
    balls.push_back({H.conormal_at(2 * kPi * (i + 0.5) / nballs, 0), 1.2 * kPi / nballs * 1.01});
  const double horizon = c.at("horizon");
  const auto Ts = c.at("T_list").get<std::vector<double>>();
  const auto Ss = c.at("S_list").get<std::vector<double>>();
  const auto crossings = compute_crossings(H, samples, horizon, ropts);

  auto out = s.open("ladder.csv");
  out << "T,N,S,bracket,sigma_B\n";
  int inversions = 0, skipped = 0;
  bool conclusive = true;
  std::vector<double> limits;
  for (double T : Ts) {
    const auto dec = recurrence_decomposition(H, samples, balls, T, crossings, horizon, horizon);
    if (!dec.conclusive) {
      conclusive = false;
      continue;
    }
    double previous_limit = std::numeric_limits<double>::infinity();
    for (int N = 1; N <= nballs + 1; ++N) {
      const double limit = std::sqrt(dec.sigma_B(N));
      double previous = std::numeric_limits<double>::infinity();
      for (double S : Ss) {
        if (!(S > T)) {
          ++skipped;
          continue;
        }
        const double b = dec.bracket(N, S);
        out << T << ',' << N << ',' << S << ',' << b << ',' << dec.sigma_B(N) << '\n';
        if (b > previous) ++inversions;
        previous = b;
      }
      out << T << ',' << N << ",inf," << limit << ',' << dec.sigma_B(N) << '\n';
      if (limit > previous_limit) ++inversions;
      previous_limit = limit;
    }
    if (!limits.empty() && previous_limit > limits.back()) ++inversions;
    limits.push_back(previous_limit);
  }
  s.res.summary["ladder"] = {{"inversions", inversions}, {"limits", limits},
                             {"conclusive", conclusive}, {"samples", samples.size()}};
  if (skipped) s.res.warnings.push_back(std::to_string(skipped) + " ladder entries with S <= T skipped");
  s.expect(conclusive, "recurrence decomposition inconclusive");
  s.expect(inversions == 0, std::to_string(inversions) + " inversions on the recurrence ladder");
}

void sphere_returns(const json& c, Sink& s) {
  ReturnOptions ropts;
  ropts.prox_tol = c.at("prox_tol");
  const double T_max = c.at("T_max");
  const double tol = c.at("tolerance");
  const int bins = c.at("bins");

  std::vector<ReturnRecord> all;
  auto table = s.open("cases.csv");
  table << "case,first_index,count,expected_T,max_error,bin_defect,bin_tolerance\n";
  json cases = json::object();
  for (const std::string name : c.at("cases")) {
    const ReturnCase rc = return_case(name);
    const auto samples = sample_conormal(rc.H, c.at("density").get<double>());
    std::vector<ReturnRecord> recs(samples.size());
    parallel_for(static_cast<int>(samples.size()),
                 [&](int i) { recs[i] = first_return(rc.H, samples[i], T_max, ropts); });

    const int sides = rc.H.kind() == SubmanifoldKind::Point ? 1 : 2;
    const double period = rc.H.param_period();
    auto bin_of = [&](double param, int branch) {
      const double w = param - period * std::floor(param / period);
      const int b = std::clamp(static_cast<int>(w / period * bins), 0, bins - 1);
      return b + (sides == 2 && branch < 0 ? bins : 0);
    };
    std::vector<double> before(sides * bins, 0.0), after(sides * bins, 0.0);
    double worst = 0.0, wmax = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      wmax = std::max(wmax, samples[i].weight);
      before[bin_of(samples[i].param, samples[i].branch)] += samples[i].weight;
      if (!recs[i].returned()) {
        worst = std::numeric_limits<double>::infinity();
        continue;
      }
      worst = std::max(worst, std::abs(recs[i].T_H - rc.period));
      const ConormalDistance d = rc.H.conormal_distance(recs[i].eta);
      after[bin_of(d.param + 1e-9, d.branch)] += samples[i].weight;
    }
    double defect = 0.0;
    for (std::size_t b = 0; b < before.size(); ++b) defect = std::max(defect, std::abs(before[b] - after[b]));
    const double cell = 2 * wmax;
    table << name << ',' << all.size() << ',' << recs.size() << ',' << rc.period << ',' << worst << ','
          << defect << ',' << cell << '\n';
    all.insert(all.end(), recs.begin(), recs.end());
    cases[name] = {{"expected_T", rc.period}, {"max_error", worst}, {"bin_defect", defect},
                   {"bin_tolerance", cell}, {"samples", recs.size()}};
    s.expect(worst <= tol, name + ": T_H off by " + fmt(worst));
    s.expect(defect <= cell, name + ": return map moves " + fmt(defect) + " between bins");
  }
  auto out = s.open("returns.csv");
  write_returns_csv(out, all);
  s.res.summary["cases"] = cases;
  if (c.at("ladder").at("enabled").get<bool>()) returns_ladder(c.at("ladder"), ropts, s);
}

void cover_partition(const json& c, Sink& s) {
  const double tau = c.at("tau"), R = c.at("R"), t0 = c.at("t0"), T = c.at("T");
  const Submanifold H = torus_line(Eigen::Vector2d(1, 0));
  const auto samples = sample_conormal(H, c.at("density").get<double>());
  CoverOptions co;
  co.tau = tau;
  co.R = R;
  const TubeCover cover = build_cover(H, samples, co);
  std::vector<int> all(cover.tubes.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  const WindowCheck wc = check_window(H, cover.tubes, all, t0, T);

  PartitionCertificate cert;
  cert.mechanism = "window";
  cert.R = R;
  cert.tau = tau;
  for (const auto& x : samples) cert.sigma_total += x.weight;
  if (wc.certified) {
    cert.groups.push_back({all, t0, T, wc.direction, cert.sigma_total});
  } else {
    cert.B = all;
    cert.sigma_B = cert.sigma_total;
  }
  for (const Tube& t : cover.tubes) cert.skeleton_hashes.push_back(t.hash);
  const bool reverified = reverify(H, cover.tubes, cert);
  {
    auto out = s.open("certificate.json");
    out << to_json(cert).dump(2) << '\n';
  }

  auto out = s.open("bounds.csv");
  write_bound_csv_header(out);
  std::vector<CountGroup> groups;
  for (const auto& g : cert.groups) groups.push_back({long(g.members.size()), g.t, g.T});
  const BoundReport main = tube_bracket(long(cert.B.size()), groups, R, tau, 2, 1);
  write_bound_csv_row(out, main);

  const long cconst = c.at("count_constant");
  double first = 0.0, deviation = 0.0;
  for (int e : c.at("R_exponents").get<std::vector<int>>()) {
    const double r = std::ldexp(1.0, -e);
    const BoundReport b = tube_bracket(cconst << e, {}, r, tau, 2, 1);
    write_bound_csv_row(out, b);
    if (first == 0.0) first = b.bracket;
    deviation = std::max(deviation, std::abs(b.bracket / first - 1.0));
  }

  std::mt19937_64 rng(c.at("seed").get<std::uint64_t>());
  std::uniform_real_distribution<double> U(0.0, 1.0);
  int violations = 0;
  const int trials = c.at("trials");
  for (int trial = 0; trial < trials; ++trial) {
    const double sB = 5 * U(rng);
    std::vector<SigmaGroup> g;
    std::vector<CountGroup> cg;
    for (int l = 0, L = 1 + trial % 4; l < L; ++l) {
      const double t = 0.1 + U(rng), TT = t + 0.01 + 10 * U(rng);
      g.push_back({3 * U(rng), t, TT});
      cg.push_back({long(100 * U(rng)), t, TT});
    }
    const long nB = long(100 * U(rng));
    const double r = 0.01 + 0.5 * U(rng), ta = 0.05 + U(rng);
    const double base = prelim_bracket(sB, g).bracket;
    const double tbase = tube_bracket(nB, cg, r, ta, 2, 1).bracket;
    const std::size_t l = trial % g.size();
    // Each perturbation enlarges B, a group, or a group's t/T.
    violations += prelim_bracket(sB + U(rng), g).bracket < base;
    violations += tube_bracket(nB + 1 + trial % 7, cg, r, ta, 2, 1).bracket < tbase;
    auto g2 = g;
    g2[l].sigma += U(rng);
    violations += prelim_bracket(sB, g2).bracket < base;
    auto cg2 = cg;
    cg2[l].count += 1 + trial % 5;
    violations += tube_bracket(nB, cg2, r, ta, 2, 1).bracket < tbase;
    g2 = g;
    g2[l].T = g[l].t + (g[l].T - g[l].t) * (0.01 + 0.98 * U(rng));
    violations += prelim_bracket(sB, g2).bracket < base;
    cg2 = cg;
    cg2[l].T = g2[l].T;
    violations += tube_bracket(nB, cg2, r, ta, 2, 1).bracket < tbase;
  }

  s.res.summary = {{"tubes", cover.tubes.size()}, {"colors", cover.colors},
                   {"certified", wc.certified}, {"reverified", reverified},
                   {"bracket", main.bracket}, {"identity_deviation", deviation},
                   {"trials", trials}, {"violations", violations}};
  if (!wc.certified) s.res.warnings.push_back("window not certified; all tubes placed in B");
  s.expect(reverified, "certificate failed re-verification");
  s.expect(deviation <= c.at("identity_tolerance").get<double>(),
           "all-in-B bracket varies with R by " + fmt(deviation));
  s.expect(violations == 0, std::to_string(violations) + " monotonicity violations");
}

void catmap(const json& c, Sink& s) {
  const HyperbolicToyMap cat;
  const TorusRectangle A0 = stable_rectangle(cat, c.at("rect_length").get<double>(), c.at("rect_width").get<double>());
  const int t0 = c.at("t0");
  ContractionOptions opts;
  opts.grid = c.at("grid");
  opts.shrink = c.at("shrink");
  opts.alpha = c.at("alpha");
  opts.delta = c.at("delta");
  const double R = 1.0 / opts.grid, tau = 1.0;

  const ContractionResult res = contraction_partition(cat, A0, t0, c.at("T").get<int>(), c.at("eps").get<double>(), opts);
  const json cj = to_json(res.certificate);
  const bool reverified = reverify_contraction(cat, res.certificate, opts.grid) &&
                          reverify_contraction(cat, certificate_from_json(json::parse(cj.dump())), opts.grid);
  {
    auto out = s.open("certificate.json");
    out << cj.dump(2) << '\n';
  }
  {
    auto out = s.open("levels.csv");
    out << "T,size_A,size_B\n";
    for (const auto& l : res.levels) out << l.T << ',' << l.size_A << ',' << l.size_B << '\n';
  }

  auto counts = [](const PartitionCertificate& cert) {
    std::vector<CountGroup> g;
    for (const auto& x : cert.groups) g.push_back({long(x.members.size()), x.t, x.T});
    return g;
  };

  // Bracket along a T ladder below the Ehrenfest horizon of ladder_h.
  auto out = s.open("bounds.csv");
  write_bound_csv_header(out);
  opts.h = c.at("ladder_h");
  std::vector<double> ladder;
  int inversions = 0;
  for (int T : c.at("T_ladder").get<std::vector<int>>()) {
    const ContractionResult r = contraction_partition(cat, A0, t0, T, c.at("eps").get<double>(), opts);
    const BoundReport b = tube_bracket(long(r.certificate.B.size()), counts(r.certificate), R, tau, 2, 1, opts.h);
    write_bound_csv_row(out, b);
    if (!ladder.empty() && b.bracket >= ladder.back()) ++inversions;
    ladder.push_back(b.bracket);
  }

  // Synthetic sweep: group windows scaled to T(h) = 2 alpha T_e(h), no residual.
  const double Lambda = max_expansion_rate(cat);
  const double T_main = c.at("T").get<double>();
  std::vector<std::pair<double, double>> pairs;
  auto sweep = s.open("sweep_bounds.csv");
  write_bound_csv_header(sweep);
  for (double h : c.at("h_sweep").get<std::vector<double>>()) {
    const double scale = 2 * opts.alpha * ehrenfest_time(h, Lambda) / T_main;
    auto g = counts(res.certificate);
    for (auto& x : g) x.T *= scale;
    const BoundReport b = tube_bracket(0, g, R, tau, 2, 1, h);
    write_bound_csv_row(sweep, b);
    pairs.emplace_back(h, b.bracket);
  }
  const ScalingFit fit = scaling_fit(pairs, FitModel::PowerTimesSqrtLog);
  write_fit(s, fit);

  const double sA = res.certificate.sigma_total;
  s.res.summary = {{"reverified", reverified}, {"residual_ratio", res.residual_ratio},
                   {"levels", res.levels.size()}, {"size_A0", res.size_A0},
                   {"sigma_B", res.certificate.sigma_B}, {"sigma_A0", sA},
                   {"ladder", ladder}, {"ladder_inversions", inversions},
                   {"q", fit.log_correction}, {"p", fit.exponent}, {"Lambda", Lambda}};
  s.expect(reverified, "contraction certificate failed re-verification");
  s.expect(res.certificate.sigma_B <= c.at("residual_max").get<double>() * sA,
           "residual measure ratio " + fmt(res.certificate.sigma_B / sA));
  s.expect(inversions == 0, "bracket does not decrease along the T ladder");
  s.expect(std::abs(fit.log_correction - c.at("q_expected").get<double>()) <= c.at("q_tolerance").get<double>(),
           "log exponent " + fmt(fit.log_correction));
}

void tube_mass(const json& c, Sink& s) {
  const int N = c.at("N");
  const Eigen::Vector2i mode(c.at("mode").at(0).get<int>(), c.at("mode").at(1).get<int>());
  if (mode.isZero()) throw ConfigError("mode must be nonzero");
  const double h = 1.0 / (2 * kPi * mode.cast<double>().norm());
  const double delta = c.at("delta"), R = c.at("R");
  const json& gc = c.at("group");
  const double t0 = gc.at("t0"), T = gc.at("T");
  CutoffOptions copt;
  copt.nx = c.at("cutoff_nx");
  copt.ntheta = c.at("cutoff_ntheta");

  const Submanifold H = torus_line(Eigen::Vector2d(1, 0));
  const auto samples = sample_conormal(H, c.at("density").get<double>());
  const GridField u = GridField::from_modes(N, h, {{mode, 1.0}});
  u.validate();
  if (c.at("write_grid").get<bool>()) {
    auto out = s.open("field.bin");
    write_grid(out, u);
  }

  auto family = [&](double tau) {
    CoverOptions co;
    co.tau = tau;
    co.R = R;
    co.h = h;
    co.delta = delta;
    TubeCover cover = build_cover(H, samples, co);
    std::vector<SymbolGrid> raw(cover.tubes.size());
    parallel_for(static_cast<int>(raw.size()),
                 [&](int i) { raw[i] = tube_cutoff(H, cover.tubes[i], h, delta, copt); });
    return std::make_pair(std::move(cover), normalize_partition(raw, PartitionNorm::SumOfSquares));
  };

  auto [gcover, gfam] = family(gc.at("tau").get<double>());
  std::vector<int> all(gcover.tubes.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  const WindowCheck wc = check_window(H, gcover.tubes, all, t0, T);

  PartitionCertificate cert;
  cert.mechanism = "window";
  cert.h = h;
  cert.delta = delta;
  cert.R = R;
  cert.tau = gc.at("tau");
  for (const auto& x : samples) cert.sigma_total += x.weight;
  if (wc.certified) cert.groups.push_back({all, t0, T, wc.direction, cert.sigma_total});
  else cert.B = all, cert.sigma_B = cert.sigma_total;
  for (const Tube& t : gcover.tubes) cert.skeleton_hashes.push_back(t.hash);
  {
    auto out = s.open("certificate.json");
    out << to_json(cert).dump(2) << '\n';
  }

  auto out = s.open("mass.csv");
  write_mass_csv_header(out);
  json summary = {{"h", h}, {"N", N}, {"group_tubes", all.size()}, {"certified", wc.certified}};
  if (wc.certified) {
    for (auto& a : gfam) a.window = SymbolWindow{t0, T, wc.direction};
    const MassReport g = localized_mass(u, gfam, cert.groups.front(), "G1");
    write_mass_csv_rows(out, g);
    summary["group_ratio"] = g.ratio;
    s.expect(g.ratio <= c.at("group_ratio_max").get<double>(), "group mass ratio " + fmt(g.ratio));
    TimeAverageOptions ta;
    ta.tolerance = c.at("average_tolerance");
    const SymbolGrid chi = group_symbol(gfam, all, SymbolWindow{t0, T, wc.direction});
    summary["average_bound"] = t0 / T * (1 + ta.tolerance);
    try {
      summary["time_average"] = time_average_symbol(chi, t0, T, c.at("average_steps").get<int>(), ta);
    } catch (const AssertionFailure& e) {
      s.res.failures.push_back(e.what());
    }
  } else {
    s.res.failures.push_back("group window [" + fmt(t0) + ", " + fmt(T) + "] not certified");
  }
  gfam.clear();

  auto [ccover, cfam] = family(c.at("cover_tau").get<double>());
  const MassReport full = cover_mass(u, cfam);
  write_mass_csv_rows(out, full);
  summary["cover_tubes"] = ccover.tubes.size();
  summary["colors"] = ccover.colors;
  summary["cover_ratio"] = full.ratio;
  s.res.summary = summary;
  s.expect(full.ratio >= c.at("cover_ratio_min").get<double>() && full.ratio <= ccover.colors,
           "cover mass ratio " + fmt(full.ratio) + " outside [min, colors]");
}

void conjugacy(const json& c, Sink& s) {
  const ManifoldModel sphere = ManifoldModel::sphere(), flat = ManifoldModel::flat_torus();
  const int seeds = c.at("seeds"), events = c.at("events");
  const double r = c.at("r"), tol = c.at("tolerance");
  auto out = s.open("conjugacy.csv");
  out << "manifold,seed,m,t,expected,error,multiplicity\n";
  double worst = 0.0;
  bool counts_ok = true;
  for (int k = 0; k < seeds; ++k) {
    const CotangentPoint seed = unit_covector(sphere, {Eigen::Vector2d(0.9, 0.2 * k), 0}, 0.7 * k);
    const ConjugacyReport rep = conjugate_points(sphere, seed, 0.0, events * kPi + 0.1, r);
    counts_ok = counts_ok && int(rep.events.size()) == events;
    for (std::size_t m = 0; m < rep.events.size(); ++m) {
      const double expected = (m + 1) * kPi, err = std::abs(rep.events[m].t - expected);
      worst = std::max(worst, err);
      out << "sphere," << k << ',' << m + 1 << ',' << rep.events[m].t << ',' << expected << ',' << err
          << ',' << rep.events[m].multiplicity << '\n';
    }
  }
  const ConjugacyReport flat_rep =
      conjugate_points(flat, unit_covector(flat, {Eigen::Vector2d(0.1, 0.2), 0}, 0.3), 0.0,
                       c.at("torus_t_end").get<double>(), r);
  for (const auto& e : flat_rep.events)
    out << "flat_torus,0,0," << e.t << ",nan,nan," << e.multiplicity << '\n';

  const double a = c.at("a");
  const ConjugacyCertificate cs = conjugacy_certificate(
      sphere, {sphere_chart_point(Eigen::Vector3d(0, 0, 1), 1)}, c.at("sphere_T").get<double>(), a);
  std::vector<BasePoint> U;
  for (int i = 0; i < 4; ++i) U.push_back({Eigen::Vector2d(0.25 * i, 0.1 + 0.2 * i), 0});
  const ConjugacyCertificate ct = conjugacy_certificate(flat, U, c.at("torus_T").get<double>(), a);
  auto cert = s.open("certificates.csv");
  cert << "manifold,holds,grid_points,witness_t,witness_distance,witness_radius\n";
  for (const auto& [name, cc] : {std::pair{"sphere", &cs}, std::pair{"flat_torus", &ct}}) {
    cert << name << ',' << cc->holds << ',' << cc->grid_points;
    if (cc->witnesses.empty()) cert << ",nan,nan,nan\n";
    else cert << ',' << cc->witnesses[0].t << ',' << cc->witnesses[0].distance << ',' << cc->witnesses[0].radius << '\n';
  }

  const double witness = cs.witnesses.empty() ? std::numeric_limits<double>::quiet_NaN() : cs.witnesses[0].t;
  s.res.summary = {{"max_event_error", worst}, {"event_counts_ok", counts_ok},
                   {"flat_events", flat_rep.events.size()}, {"sphere_holds", cs.holds},
                   {"sphere_witness_t", witness}, {"flat_holds", ct.holds}};
  s.expect(counts_ok && worst <= tol, "sphere conjugate points off by " + fmt(worst));
  s.expect(flat_rep.events.empty(), "conjugate points on the flat torus");
  s.expect(!cs.holds && std::abs(witness - 2 * kPi) <= c.at("witness_tolerance").get<double>(),
           "sphere certificate did not fail near 2 pi");
  s.expect(ct.holds, "flat torus certificate failed");
}

void mu_thicken(const json& c, Sink& s) {
  const Submanifold H = torus_line(Eigen::Vector2d(1, 0));
  const auto deltas = c.at("deltas").get<std::vector<double>>();
  const double k = c.at("sigma_factor");
  const InvariantMeasure mu = InvariantMeasure::liouville(
      ManifoldModel::flat_torus(), c.at("liouville_count").get<int>(), c.at("seed").get<std::uint64_t>());
  const auto reference = sample_conormal(H, c.at("reference_density").get<double>());
  const std::vector<std::pair<std::string, std::function<bool(const ConormalSample&)>>> sets{
      {"all", [](const ConormalSample&) { return true; }},
      {"param_below_0.3", [](const ConormalSample& x) { return x.param < 0.3; }},
      {"branch_plus", [](const ConormalSample& x) { return x.branch > 0; }},
      {"branch_minus_param_above_0.5",
       [](const ConormalSample& x) { return x.branch < 0 && x.param > 0.5; }},
  };
  auto out = s.open("thicken.csv");
  out << "case,measure,limit,expected,std_error,sigmas,rel_error\n";
  double worst_sigmas = 0.0, worst_rel = 0.0;
  for (const auto& [name, A] : sets) {
    const ThickenResult r = thicken_measure(mu, H, A, deltas);
    const double expected = conormal_measure(reference, A) / kPi;
    const double z = std::abs(r.limit - expected) / r.std_error;
    worst_sigmas = std::max(worst_sigmas, z);
    out << name << ",liouville," << r.limit << ',' << expected << ',' << r.std_error << ',' << z << ','
        << std::abs(r.limit / expected - 1) << '\n';
  }

  const int count = c.at("orbit_count");
  const auto odeltas = c.at("orbit_deltas").get<std::vector<double>>();
  const ManifoldModel flat = ManifoldModel::flat_torus(), sphere = ManifoldModel::sphere();
  const double L5 = std::sqrt(5.0), L2 = std::sqrt(2.0);
  struct Orbit {
    std::string name;
    ManifoldModel m;
    Submanifold H;
    CotangentPoint seed;
    double L, crossings;
  };
  const std::vector<Orbit> orbits{
      {"torus_line_slope_2", flat, H, {Eigen::Vector2d(0.1, 0.05), Eigen::Vector2d(1, 2) / L5, 0}, L5, 2},
      {"sphere_meridian_equator", sphere, sphere_equator(),
       {Eigen::Vector2d(1.0, 0.4), Eigen::Vector2d(1, 0), 0}, 2 * kPi, 2},
      {"torus_point_diagonal", flat, Submanifold::point(flat, {Eigen::Vector2d(0.3, 0.6), 0}),
       {Eigen::Vector2d(0.3, 0.6), Eigen::Vector2d(1, 1) / L2, 0}, L2, 1},
  };
  for (const Orbit& o : orbits) {
    const InvariantMeasure po = InvariantMeasure::periodic_orbit(o.m, o.seed, o.L, count);
    const ThickenResult r = thicken_measure(po, o.H, [](const ConormalSample&) { return true; }, odeltas);
    const double expected = o.crossings / o.L, rel = std::abs(r.limit / expected - 1);
    worst_rel = std::max(worst_rel, rel);
    out << o.name << ",periodic_orbit," << r.limit << ',' << expected << ',' << r.std_error << ",nan,"
        << rel << '\n';
  }
  s.res.summary = {{"max_sigmas", worst_sigmas}, {"max_orbit_rel_error", worst_rel}};
  s.expect(worst_sigmas <= k, "Liouville thickening off by " + fmt(worst_sigmas) + " sigma");
  s.expect(worst_rel <= c.at("orbit_tolerance").get<double>(),
           "periodic orbit measure off by " + fmt(worst_rel));
}

}  // namespace

const std::vector<ExperimentInfo>& experiment_catalog() {
  static const std::vector<ExperimentInfo> catalog = build_catalog();
  return catalog;
}

const ExperimentInfo& experiment_info(const std::string& name) {
  for (const auto& e : experiment_catalog())
    if (e.name == name) return e;
  throw ConfigError("unknown experiment " + name);
}

nlohmann::json validate_config(const nlohmann::json& raw) {
  if (!raw.is_object()) throw ConfigError("config must be an object");
  if (!raw.contains("schema_version")) throw ConfigError("missing schema_version");
  if (raw.at("schema_version") != kSchemaVersion)
    throw ConfigError("unsupported schema_version " + raw.at("schema_version").dump());
  if (!raw.contains("experiment") || !raw.at("experiment").is_string())
    throw ConfigError("missing experiment");
  json cfg = experiment_info(raw.at("experiment")).defaults;
  overlay(cfg, raw, "");
  return cfg;
}

ExperimentResult run_pipeline(const nlohmann::json& cfg, const std::filesystem::path& dir) {
  ExperimentResult res;
  Sink s{dir, res};
  const std::string name = cfg.at("experiment");
  if (name == "zonal_sup") zonal_sup(cfg, s);
  else if (name == "beam_restriction") beam(cfg, s);
  else if (name == "torus_average") torus_average(cfg, s);
  else if (name == "sphere_returns") sphere_returns(cfg, s);
  else if (name == "cover_partition") cover_partition(cfg, s);
  else if (name == "catmap_contraction") catmap(cfg, s);
  else if (name == "tube_mass") tube_mass(cfg, s);
  else if (name == "conjugacy") conjugacy(cfg, s);
  else if (name == "mu_thicken") mu_thicken(cfg, s);
  else throw ConfigError("unknown experiment " + name);
  return res;
}

}  // namespace eigavg
