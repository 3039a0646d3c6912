#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "eigavg/eigenmodes.hpp"

using namespace eigavg;

namespace {

constexpr double kPi = std::numbers::pi;

Eigen::Vector3d on_sphere(double theta, double phi) {
  return {std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta)};
}

// Midpoint rule in theta and phi; independent of the library's Gauss rule.
double midpoint_l2(const EigenmodeSpec& s, int nt, int np) {
  double sum = 0.0;
  for (int i = 0; i < nt; ++i) {
    const double th = kPi * (i + 0.5) / nt;
    for (int j = 0; j < np; ++j) {
      const double ph = 2 * kPi * (j + 0.5) / np;
      sum += std::norm(eval_mode(s, on_sphere(th, ph))) * std::sin(th);
    }
  }
  return std::sqrt(sum * (kPi / nt) * (2 * kPi / np));
}

// P_l(0) = (-1)^{l/2} l! / (2^l ((l/2)!)^2) for even l.
long double legendre_at_zero(int l) {
  if (l % 2) return 0.0L;
  const long double lg = std::lgamma((long double)l + 1) - l * std::log(2.0L) -
                         2 * std::lgamma((long double)l / 2 + 1);
  return ((l / 2) % 2 ? -1.0L : 1.0L) * std::exp(lg);
}

// -h^2 Delta u - u with the 5-point stencil in (theta, phi).
Complex sphere_residual(const EigenmodeSpec& s, double th, double ph, double e) {
  auto u = [&](double a, double b) { return eval_mode(s, on_sphere(a, b)); };
  const Complex c = u(th, ph);
  const Complex utt = (u(th + e, ph) - 2.0 * c + u(th - e, ph)) / (e * e);
  const Complex ut = (u(th + e, ph) - u(th - e, ph)) / (2 * e);
  const Complex upp = (u(th, ph + e) - 2.0 * c + u(th, ph - e)) / (e * e);
  const double st = std::sin(th);
  const Complex lap = utt + std::cos(th) / st * ut + upp / (st * st);
  return -s.h * s.h * lap - c;
}

Submanifold horizontal() {
  return Submanifold::closed_geodesic(ManifoldModel::flat_torus(),
                                      {Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0), 0}, 1.0);
}

Submanifold equator() {
  return Submanifold::closed_geodesic(ManifoldModel::sphere(),
                                      {Eigen::Vector2d(kPi / 2, 0), Eigen::Vector2d(0, 1), 0}, 2 * kPi);
}

}  // namespace

TEST_CASE("mode evaluation") {
  SUBCASE("zonal value at the pole and unit norm") {
    for (int l : {1, 7, 50}) {
      const EigenmodeSpec z = EigenmodeSpec::zonal(l);
      CHECK(std::abs(eval_mode(z, Eigen::Vector3d(0, 0, 1)) - std::sqrt((2.0 * l + 1) / (4 * kPi))) < 1e-12);
      CHECK(std::abs(midpoint_l2(z, 40000, 8) - 1.0) < 1e-6);
      CHECK(std::abs(l2_norm(z) - 1.0) < 1e-12);
    }
  }
  SUBCASE("torus mode substitution") {
    const Complex v = eval_mode(EigenmodeSpec::torus_mode({0, 1}), BasePoint{Eigen::Vector2d(0.25, 0.25), 0});
    CHECK(std::abs(v - Complex(0, 1)) < 1e-15);
    CHECK(EigenmodeSpec::torus_mode({3, 4}).h == doctest::Approx(1.0 / (10 * kPi)).epsilon(1e-15));
  }
  SUBCASE("zonal symmetry about a tilted axis") {
    const Eigen::Vector3d axis = Eigen::Vector3d(1, 1, 1).normalized();
    const EigenmodeSpec z = EigenmodeSpec::zonal(37, axis);
    const Eigen::Vector3d X = Eigen::AngleAxisd(0.7, axis.unitOrthogonal()) * axis;
    const Complex v0 = eval_mode(z, X);
    for (double a : {0.3, 1.1, 2.5, 4.0}) CHECK(std::abs(eval_mode(z, Eigen::AngleAxisd(a, axis) * X) - v0) < 1e-12);
  }
  SUBCASE("highest weight and random modes are normalized") {
    for (int l : {1, 5, 20}) {
      CHECK(std::abs(midpoint_l2(EigenmodeSpec::highest_weight(l), 3000, 200) - 1.0) < 1e-6);
      const EigenmodeSpec r = EigenmodeSpec::random_sphere_mode(l, 11);
      CHECK(std::abs(midpoint_l2(r, 600, 200) - 1.0) < 1e-5);
      CHECK(std::abs(l2_norm(r) - 1.0) < 1e-10);
    }
  }
  SUBCASE("beam is flagged as a model") {
    CHECK_FALSE(EigenmodeSpec::euclidean_beam(0.01).is_eigenfunction());
    CHECK(EigenmodeSpec::highest_weight(3).is_eigenfunction());
  }
  SUBCASE("degree guard") {
    EigenmodeSpec z = EigenmodeSpec::zonal(5);
    z.l = kMaxDegree + 1;
    CHECK_THROWS_AS(eval_mode(z, Eigen::Vector3d(0, 0, 1)), OverflowGuardError);
    CHECK_NOTHROW(legendre(kMaxDegree, 0.3));
  }
}

TEST_CASE("eigen-residual of the stencil converges at second order") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> th(0.5, 2.6), ph(0.0, 2 * kPi);
  for (const EigenmodeSpec& s : {EigenmodeSpec::zonal(10, Eigen::Vector3d(0, 0.6, 0.8)),
                                 EigenmodeSpec::highest_weight(12), EigenmodeSpec::random_sphere_mode(9, 2)}) {
    for (int k = 0; k < 5; ++k) {
      const double a = th(rng), b = ph(rng);
      const double r1 = std::abs(sphere_residual(s, a, b, 2e-3));
      const double r2 = std::abs(sphere_residual(s, a, b, 1e-3));
      CHECK(r1 < 1e-3);
      if (r1 > 1e-9) CHECK(r1 / r2 == doctest::Approx(4.0).epsilon(0.1));
    }
  }
  const EigenmodeSpec t = EigenmodeSpec::torus_mode({2, -3});
  auto u = [&](double x, double y) { return eval_mode(t, BasePoint{Eigen::Vector2d(x, y), 0}); };
  auto res = [&](double e) {
    const double x = 0.31, y = 0.77;
    const Complex lap = (u(x + e, y) + u(x - e, y) + u(x, y + e) + u(x, y - e) - 4.0 * u(x, y)) / (e * e);
    return std::abs(-t.h * t.h * lap - u(x, y));
  };
  CHECK(res(2e-3) / res(1e-3) == doctest::Approx(4.0).epsilon(0.05));
}

TEST_CASE("torus Parseval") {
  const std::vector<std::pair<Eigen::Vector2i, Complex>> terms{
      {{1, 0}, {0.5, -1.0}}, {{0, 3}, {2.0, 0.25}}, {{-2, 5}, {0.0, 1.5}}};
  double coef = 0.0;
  for (const auto& [m, c] : terms) coef += std::norm(c);
  const int n = 64;
  double sum = 0.0;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      Complex v = 0.0;
      for (const auto& [m, c] : terms)
        v += c * eval_mode(EigenmodeSpec::torus_mode(m), BasePoint{Eigen::Vector2d(double(a) / n, double(b) / n), 0});
      sum += std::norm(v);
    }
  CHECK(std::abs(std::sqrt(sum / (n * n)) - std::sqrt(coef)) < 1e-10);
  CHECK(std::abs(l2_norm(EigenmodeSpec::torus_mode({4, -1})) - 1.0) < 1e-12);
}

TEST_CASE("averages over submanifolds") {
  SUBCASE("lattice modes over a horizontal line") {
    const Submanifold H = horizontal();
    for (int m2 : {1, 4, -9}) CHECK(std::abs(average_over(H, EigenmodeSpec::torus_mode({0, m2})).value - 1.0) < 1e-10);
    for (const Eigen::Vector2i m : {Eigen::Vector2i(1, 0), Eigen::Vector2i(3, 7), Eigen::Vector2i(-5, 2)})
      CHECK(std::abs(average_over(H, EigenmodeSpec::torus_mode(m)).value) < 1e-10);
  }
  SUBCASE("zonal modes over the equator") {
    const Submanifold H = equator();
    for (int l : {20, 21, 64, 101, 400}) {
      const AverageResult r = average_over(H, EigenmodeSpec::zonal(l));
      const double expected = 2 * kPi * std::sqrt((2.0 * l + 1) / (4 * kPi)) * double(legendre_at_zero(l));
      CHECK(std::abs(r.value - expected) < 1e-10);
      CHECK(r.error < 1e-10);
      if (l % 2 == 0) {
        // |P_l(0)| ~ sqrt(2 / (pi l)).
        CHECK(std::abs(legendre_at_zero(l)) == doctest::Approx(std::sqrt(2.0 / (kPi * l))).epsilon(0.02));
      }
    }
  }
  SUBCASE("point average is evaluation") {
    const BasePoint x{Eigen::Vector2d(1.1, 0.4), 0};
    const Submanifold P = Submanifold::point(ManifoldModel::sphere(), x);
    const EigenmodeSpec s = EigenmodeSpec::random_sphere_mode(6, 3);
    CHECK(average_over(P, s).value == eval_mode(s, x));
  }
  SUBCASE("conjugate symmetry and linearity") {
    const Submanifold H = Submanifold::closed_geodesic(
        ManifoldModel::flat_torus(), {Eigen::Vector2d(0.1, 0.2), Eigen::Vector2d(1, 2) / std::sqrt(5.0), 0},
        std::sqrt(5.0));
    for (const Eigen::Vector2i m : {Eigen::Vector2i(2, -1), Eigen::Vector2i(4, -2), Eigen::Vector2i(1, 1)}) {
      const Complex a = average_over(H, EigenmodeSpec::torus_mode(m)).value;
      const Complex b = average_over(H, EigenmodeSpec::torus_mode(-m)).value;
      CHECK(std::abs(b - std::conj(a)) < 1e-12);
    }
    // (2,-1) is orthogonal to the direction (1,2): the mode is constant on H.
    const Complex c = average_over(H, EigenmodeSpec::torus_mode({2, -1})).value;
    CHECK(std::abs(std::abs(c) - std::sqrt(5.0)) < 1e-10);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(average_over(horizontal(), EigenmodeSpec::torus_mode({1, 0}), 0), DomainError);
    CHECK_THROWS_AS(average_over(horizontal(), EigenmodeSpec::zonal(3)), DomainError);
    CHECK_THROWS_AS(average_over(horizontal(), EigenmodeSpec::euclidean_beam(0.01)), DomainError);
  }
}

TEST_CASE("beam restriction") {
  for (double h : {1e-2, 1e-3, 1e-4}) {
    const Complex v = beam_restriction(h, kPi / 2);
    CHECK(std::abs(v / (std::sqrt(2 * kPi) * std::pow(h, 0.25)) - 1.0) < 1e-6);
  }
  CHECK(std::abs(beam_restriction(1e-3, kPi / 4)) < 1e-15);
  // Gaussian Fourier transform: h^{-1/4} sqrt(2 pi h) exp(-cos^2 / 2h).
  for (double a : {1.3, 1.45}) {
    const double h = 1e-2, c = std::cos(a);
    const double exact = std::pow(h, -0.25) * std::sqrt(2 * kPi * h) * std::exp(-c * c / (2 * h));
    const Complex v = beam_restriction(h, a);
    CHECK(std::abs(v - exact) < 1e-12);
  }
  // The wider window adds only Gaussian tail.
  CHECK(std::abs(beam_restriction(1e-3, 1.2, 1.0) - beam_restriction(1e-3, 1.2)) < 1e-14);
  CHECK_THROWS_AS(beam_restriction(0.2, 1.0), DomainError);
  CHECK_THROWS_AS(beam_restriction(0.01, 2.0), DomainError);
}

TEST_CASE("sup ratios") {
  CHECK(std::abs(sup_ratio(EigenmodeSpec::torus_mode({3, 1})) - 1.0) < 1e-12);
  for (int l : {10, 30}) {
    const double r = sup_ratio(EigenmodeSpec::zonal(l, Eigen::Vector3d(0.2, -0.3, 0.9)));
    CHECK(r == doctest::Approx(std::sqrt((2.0 * l + 1) / (4 * kPi))).epsilon(1e-8));
  }
  // The highest weight mode peaks on the equator at its normalization constant.
  const int l = 40;
  const double c = std::exp(0.5 * (std::lgamma(2.0 * l + 2) - std::log(4 * kPi)) - l * std::log(2.0) -
                            std::lgamma(l + 1.0));
  CHECK(sup_ratio(EigenmodeSpec::highest_weight(l)) == doctest::Approx(c).epsilon(1e-8));
  CHECK_THROWS_AS(sup_ratio(EigenmodeSpec::zonal(5), 4.0), DomainError);
  CHECK_THROWS_AS(sup_ratio(EigenmodeSpec::euclidean_beam(0.01)), DomainError);
}

TEST_CASE("scaling fits") {
  std::vector<std::pair<double, double>> power, logc;
  for (double h = 1e-1; h > 1e-7; h /= 10) {
    power.emplace_back(h, std::sqrt(h));
    logc.emplace_back(h, 1.0 / std::sqrt(std::log(1 / h)));
  }
  const ScalingFit p = scaling_fit(power, FitModel::PowerLaw);
  CHECK(std::abs(p.exponent - 0.5) < 1e-12);
  CHECK(p.residual < 1e-12);
  const ScalingFit q = scaling_fit(logc, FitModel::PowerTimesSqrtLog);
  CHECK(std::abs(q.log_correction + 0.5) < 0.02);
  CHECK(std::abs(q.exponent) < 1e-8);

  std::vector<std::pair<double, double>> beam;
  for (double h : {1e-2, 1e-3, 1e-4}) beam.emplace_back(h, std::abs(beam_restriction(h, kPi / 2)));
  beam.emplace_back(3e-4, std::abs(beam_restriction(3e-4, kPi / 2)));
  CHECK(std::abs(scaling_fit(beam, FitModel::PowerLaw).exponent - 0.25) < 1e-3);

  CHECK_THROWS_AS(scaling_fit({power.begin(), power.begin() + 3}, FitModel::PowerLaw), DomainError);
  CHECK_THROWS_AS(scaling_fit({{1e-3, 1}, {1e-3, 2}, {1e-3, 3}, {1e-3, 4}}, FitModel::PowerLaw), RankError);
  CHECK_THROWS_AS(scaling_fit({{1e-3, 1}, {2e-3, 2}, {1e-3, 0}, {1e-1, 4}}, FitModel::PowerLaw), DomainError);
}

TEST_CASE("zonal sup sweep") {
  std::vector<std::pair<double, double>> pairs;
  for (int l : {20, 40, 80, 160, 240}) {
    const EigenmodeSpec z = EigenmodeSpec::zonal(l);
    pairs.emplace_back(z.h, sup_ratio(z));
  }
  CHECK(std::abs(scaling_fit(pairs, FitModel::PowerLaw).exponent + 0.5) < 0.05);
}

TEST_CASE("sweep CSV") {
  std::ostringstream out;
  write_sweep_csv_header(out);
  write_sweep_csv_row(out, {"torus_mode", EigenmodeSpec::torus_mode({0, 2}).label(), 0.25, {1.0, -0.5}, 1e-12});
  CHECK(out.str() ==
        "kind,l_or_m,h,value_re,value_im,abs,err_estimate\n"
        "torus_mode,0;2,0.25,1,-0.5,1.1180339887498949,9.9999999999999998e-13\n");
}
