#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "eigavg/returns.hpp"

using namespace eigavg;

namespace {

constexpr double kPi = std::numbers::pi;

Submanifold sphere_equator() {
  return Submanifold::closed_geodesic(ManifoldModel::sphere(),
                                      {Eigen::Vector2d(kPi / 2, 0), Eigen::Vector2d(0, 1), 0},
                                      2 * kPi);
}

Submanifold torus_horizontal() {
  return Submanifold::closed_geodesic(ManifoldModel::flat_torus(),
                                      {Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0), 0}, 1.0);
}

// Lattice oracle: does the ray from a lattice point in direction angle pass within tol of
// another lattice point with closest-approach time in (t_lo, t_hi]?
bool lattice_return(double angle, double tol, double t_lo, double t_hi) {
  const Eigen::Vector2d w(std::cos(angle), std::sin(angle));
  const int R = static_cast<int>(std::ceil(t_hi)) + 1;
  for (int p = -R; p <= R; ++p)
    for (int q = -R; q <= R; ++q) {
      if (p == 0 && q == 0) continue;
      const Eigen::Vector2d k(p, q);
      const double along = k.dot(w);
      const double miss = std::abs(k(0) * w(1) - k(1) * w(0));
      if (along > t_lo && along <= t_hi && miss < tol) return true;
    }
  return false;
}

}  // namespace

TEST_CASE("first return times on the exact models") {
  const ReturnOptions opts{1e-2};
  SUBCASE("sphere point: great circles close at 2 pi") {
    const Submanifold H = Submanifold::point(ManifoldModel::sphere(), {Eigen::Vector2d(1.0, 0.5), 0});
    for (const ConormalSample& s : sample_conormal(H, 4)) {
      const ReturnRecord r = first_return(H, s, 7.0, opts);
      CHECK(std::abs(r.T_H - 2 * kPi) < 1e-6);
    }
  }
  SUBCASE("sphere equator: meridians re-cross at pi") {
    const Submanifold H = sphere_equator();
    const auto samples = sample_conormal(H, 4);
    for (std::size_t i = 0; i < samples.size(); i += 5) {
      const ReturnRecord r = first_return(H, samples[i], 4.0, opts);
      CHECK(std::abs(r.T_H - kPi) < 1e-6);
      CHECK(r.eta_residual < 1e-7);
    }
  }
  SUBCASE("torus vertical loop") {
    const Submanifold H = torus_horizontal();
    const ConormalSample s{{Eigen::Vector2d(0.3, 0.0), Eigen::Vector2d(0, 1), 0}, 0.1, 0, 1, 0.3};
    const ReturnRecord r = first_return(H, s, 3.0, opts);
    CHECK(std::abs(r.T_H - 1.0) < 1e-6);
    CHECK(phase_distance(H.manifold(), r.eta, s.rho) < 1e-7);
    CHECK(r.crossings.size() == 2);
  }
  SUBCASE("no event before the horizon") {
    const Submanifold H = torus_horizontal();
    const ConormalSample s{{Eigen::Vector2d(0.3, 0.0), Eigen::Vector2d(0, 1), 0}, 0.1, 0, 1, 0.3};
    CHECK_FALSE(first_return(H, s, 0.9, opts).returned());
  }
}

TEST_CASE("first return commutes with time reversal") {
  const ReturnOptions opts{1e-2};
  for (const Submanifold& H : {sphere_equator(), torus_horizontal()}) {
    const auto samples = sample_conormal(H, 6);
    for (std::size_t i = 0; i < samples.size(); i += 7) {
      const ReturnRecord fwd = first_return(H, samples[i], 8.0, opts);
      REQUIRE(fwd.returned());
      ConormalSample eta{fwd.eta, 0.0, 0, 0, 0.0};
      const ReturnRecord back = first_return(H, eta, 8.0, opts, -1);
      REQUIRE(back.returned());
      CHECK(phase_distance(H.manifold(), back.eta, samples[i].rho) < 10 * opts.prox_tol);
      CHECK(std::abs(back.T_H - fwd.T_H) < 1e-6);
    }
  }
}

TEST_CASE("return map preserves the conormal measure on coarse bins") {
  const Submanifold H = sphere_equator();
  const auto samples = sample_conormal(H, 8);
  const int bins = 8;
  std::vector<double> before(2 * bins, 0.0), after(2 * bins, 0.0);
  auto bin_of = [&](double param, int branch) {
    const int b = std::min(bins - 1, static_cast<int>(param / (2 * kPi) * bins));
    return b + (branch > 0 ? 0 : bins);
  };
  for (const ConormalSample& s : samples) {
    before[bin_of(s.param, s.branch)] += s.weight;
    const ReturnRecord r = first_return(H, s, 4.0, {1e-2});
    REQUIRE(r.returned());
    const ConormalDistance d = H.conormal_distance(r.eta);
    after[bin_of(d.param + 1e-9, d.branch)] += s.weight;
  }
  const double cell = 2 * kPi / samples.size() * 2;  // one base node carries two samples
  for (int b = 0; b < 2 * bins; ++b) CHECK(std::abs(before[b] - after[b]) <= cell);
}

TEST_CASE("loop fraction") {
  const ReturnOptions opts{1e-2};
  const Submanifold sp = Submanifold::point(ManifoldModel::sphere(), {Eigen::Vector2d(1.2, 0.1), 0});
  CHECK(loop_fraction(sp, sample_conormal(sp, 4), 7.0, opts) == 1.0);
  CHECK(loop_fraction(sp, sample_conormal(sp, 4), 0.0, opts) == 0.0);

  const Submanifold tp = Submanifold::point(ManifoldModel::flat_torus(), {Eigen::Vector2d(0.5, 0.5), 0});
  const auto samples = sample_conormal(tp, 64);
  double oracle = 0, total = 0;
  for (const ConormalSample& s : samples) {
    total += s.weight;
    if (lattice_return(s.param, opts.prox_tol, 0.0, 10.0)) oracle += s.weight;
  }
  oracle /= total;
  const double measured = loop_fraction(tp, samples, 10.0, opts);
  CHECK(oracle > 0.05);
  CHECK(std::abs(measured - oracle) <= 2.0 / samples.size());
}

TEST_CASE("returns.csv columns") {
  const Submanifold H = torus_horizontal();
  const ConormalSample s{{Eigen::Vector2d(0.3, 0.0), Eigen::Vector2d(0, 1), 0}, 0.1, 0, 1, 0.3};
  std::ostringstream out;
  write_returns_csv(out, {first_return(H, s, 3.0), first_return(H, s, 0.5)});
  std::istringstream in(out.str());
  std::string header, row1, row2;
  std::getline(in, header);
  std::getline(in, row1);
  std::getline(in, row2);
  CHECK(header == "sample_index,base_x1,base_x2,xi1,xi2,T_H,eta_distance_residual,n_crossings");
  CHECK(row1.rfind("0,0.29999999999999999,0,0,1,", 0) == 0);
  CHECK(row2.find(",inf,") != std::string::npos);
}

TEST_CASE("recurrence decomposition") {
  const ReturnOptions ropts{1e-2};
  auto angular_balls = [](const Submanifold& H, int count) {
    std::vector<ConormalBall> balls;
    for (int i = 0; i < count; ++i)
      balls.push_back({H.conormal_at(2 * kPi * (i + 0.5) / count, 0), 1.2 * kPi / count * 1.01});
    return balls;
  };

  SUBCASE("sphere point is totally recurrent") {
    const Submanifold H = Submanifold::point(ManifoldModel::sphere(), {Eigen::Vector2d(1.0, 0.4), 0});
    const auto samples = sample_conormal(H, 4);
    const auto dec = recurrence_decomposition(H, samples, angular_balls(H, 6), 2 * kPi + 0.5,
                                              {ropts});
    REQUIRE(dec.conclusive);
    for (std::size_t i = 0; i < dec.E.size(); ++i) CHECK(dec.E[i].empty());
    CHECK(dec.sigma_B(4) == doctest::Approx(2 * kPi).epsilon(1e-12));
  }

  SUBCASE("torus point matches the lattice oracle and B_N shrinks") {
    const Submanifold H = Submanifold::point(ManifoldModel::flat_torus(), {Eigen::Vector2d(0.5, 0.5), 0});
    const auto samples = sample_conormal(H, 16);
    const double T = 5.0;
    const auto balls = angular_balls(H, 8);
    const auto dec = recurrence_decomposition(H, samples, balls, T, {ropts});
    REQUIRE(dec.conclusive);
    int mismatches = 0, checked = 0;
    for (std::size_t i = 0; i < balls.size(); ++i) {
      for (int j : dec.members[i]) {
        const bool oracle_E = !lattice_return(samples[j].param, ropts.prox_tol, T, 4 * T);
        const bool in_E = std::find(dec.E[i].begin(), dec.E[i].end(), j) != dec.E[i].end();
        mismatches += oracle_E != in_E;
        ++checked;
      }
    }
    CHECK(mismatches <= checked / 50);
    double previous = dec.total() + 1;
    for (int N = 1; N <= 9; ++N) {
      CHECK(dec.sigma_B(N) <= previous);
      previous = dec.sigma_B(N);
    }
    CHECK(dec.sigma_B(9) < dec.sigma_B(1));
    CHECK(dec.sigma_B(1) == doctest::Approx(2 * kPi));
  }

  SUBCASE("horizon beyond the cap is refused") {
    const Submanifold H = Submanifold::point(ManifoldModel::flat_torus(), {Eigen::Vector2d(0.5, 0.5), 0});
    const auto samples = sample_conormal(H, 4);
    RecurrenceOptions o{ropts};
    o.horizon_cap = 10.0;
    const auto dec = recurrence_decomposition(H, samples, angular_balls(H, 4), 5.0, o);
    CHECK_FALSE(dec.conclusive);
    CHECK_THROWS_AS(dec.bracket(2, 100.0), AssertionFailure);
  }

  SUBCASE("uncovered samples") {
    const Submanifold H = Submanifold::point(ManifoldModel::flat_torus(), {Eigen::Vector2d(0.5, 0.5), 0});
    const std::vector<ConormalBall> one{{H.conormal_at(0.0, 0), 0.1}};
    CHECK_THROWS_AS(recurrence_decomposition(H, sample_conormal(H, 4), one, 1.0, {ropts}),
                    CoverError);
  }
}

TEST_CASE("conjugate points") {
  SUBCASE("sphere events at m pi, independent of the seed") {
    const ManifoldModel s = ManifoldModel::sphere();
    std::vector<double> first;
    for (int k = 0; k < 6; ++k) {
      const CotangentPoint seed = unit_covector(s, {Eigen::Vector2d(0.9, 0.2 * k), 0}, 0.7 * k);
      const ConjugacyReport rep = conjugate_points(s, seed, 0.0, 6 * kPi + 0.1, 0.1);
      REQUIRE(rep.events.size() == 6);
      for (int m = 1; m <= 6; ++m) {
        CHECK(std::abs(rep.events[m - 1].t - m * kPi) < 1e-6);
        CHECK(rep.events[m - 1].multiplicity == 1);
      }
      if (first.empty())
        for (auto& e : rep.events) first.push_back(e.t);
      for (int m = 0; m < 6; ++m) CHECK(std::abs(rep.events[m].t - first[m]) < 1e-8);
      for (double t0 = 0.5; t0 < 18; t0 += 0.37) CHECK(rep.multiplicity_in(t0 - 0.5, t0 + 0.5) <= 1);
    }
  }
  SUBCASE("flat torus has none") {
    const ManifoldModel f = ManifoldModel::flat_torus();
    CHECK(conjugate_points(f, unit_covector(f, {Eigen::Vector2d(0.1, 0.2), 0}, 0.3), 0, 50, 0.1)
              .events.empty());
  }
  SUBCASE("conformal torus: the geodesic x1 = 0 has constant curvature") {
    const ManifoldModel m = ManifoldModel::conformal_torus(0.1, 1);
    const double K0 = 0.1 * std::pow(2 * kPi, 2) * std::exp(-0.2);
    const CotangentPoint seed = unit_covector(m, {Eigen::Vector2d(0.0, 0.3), 0}, kPi / 2);
    const ConjugacyReport rep = conjugate_points(m, seed, 0, 4.0, 0.1);
    REQUIRE(rep.events.size() >= 2);
    CHECK(std::abs(rep.events[0].t - kPi / std::sqrt(K0)) < 1e-6);
    CHECK(std::abs(rep.events[1].t - 2 * kPi / std::sqrt(K0)) < 1e-6);
  }
}

TEST_CASE("conjugacy certificate") {
  SUBCASE("fails on the sphere with a witness near 2 pi") {
    const ManifoldModel s = ManifoldModel::sphere();
    const BasePoint north = sphere_chart_point(Eigen::Vector3d(0, 0, 1), 1);
    const ConjugacyCertificate c = conjugacy_certificate(s, {north}, 5.0, 1.0);
    CHECK_FALSE(c.holds);
    REQUIRE(c.witnesses.size() == 1);
    CHECK(std::abs(c.witnesses[0].t - 2 * kPi) < std::exp(-2 * kPi));
    CHECK(c.witnesses[0].distance < c.witnesses[0].radius);
  }
  SUBCASE("holds on the flat torus") {
    const ManifoldModel f = ManifoldModel::flat_torus();
    std::vector<BasePoint> U;
    for (int i = 0; i < 4; ++i) U.push_back({Eigen::Vector2d(0.25 * i, 0.1 + 0.2 * i), 0});
    const ConjugacyCertificate c = conjugacy_certificate(f, U, 3.0, 1.0);
    CHECK(c.holds);
    CHECK(c.grid_points > 0);
  }
}
