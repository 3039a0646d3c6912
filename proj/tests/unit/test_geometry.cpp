#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "eigavg/geometry.hpp"

using namespace eigavg;

namespace {

constexpr double kPi = std::numbers::pi;

// Christoffel symbols from central differences of g; the oracle for the closed forms.
std::array<Eigen::Matrix2d, 2> christoffel_fd(const ManifoldModel& m, const BasePoint& x) {
  const double h = 1e-5;
  std::array<Eigen::Matrix2d, 2> dg;  // dg[k] = d g / d x_k
  for (int k = 0; k < 2; ++k) {
    BasePoint xp = x, xm = x;
    xp.x(k) += h;
    xm.x(k) -= h;
    dg[k] = (metric_at(m, xp).g - metric_at(m, xm).g) / (2 * h);
  }
  const Eigen::Matrix2d gi = metric_at(m, x).g_inv;
  std::array<Eigen::Matrix2d, 2> out;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k) {
        double s = 0;
        for (int l = 0; l < 2; ++l) s += gi(i, l) * (dg[k](l, j) + dg[j](l, k) - dg[l](j, k));
        out[i](j, k) = 0.5 * s;
      }
  return out;
}

std::vector<ManifoldModel> all_models() {
  return {ManifoldModel::sphere(), ManifoldModel::flat_torus(),
          ManifoldModel::conformal_torus(0.1, 1), ManifoldModel::conformal_torus(0.3, 2)};
}

BasePoint random_point(const ManifoldModel& m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (m.is_torus()) return {Eigen::Vector2d(u(rng), u(rng)), 0};
  return {Eigen::Vector2d(0.3 + (kPi - 0.6) * u(rng), 2 * kPi * u(rng) - kPi),
          static_cast<int>(u(rng) < 0.5)};
}

}  // namespace

TEST_CASE("metric_at examples") {
  const MetricData flat = metric_at(ManifoldModel::flat_torus(), {Eigen::Vector2d(0.3, 0.7), 0});
  CHECK(flat.g.isIdentity(0.0));
  CHECK(flat.christoffel[0].isZero(0.0));
  CHECK(flat.christoffel[1].isZero(0.0));

  const MetricData sph = metric_at(ManifoldModel::sphere(), {Eigen::Vector2d(kPi / 2, 0.0), 0});
  CHECK(sph.g.isApprox(Eigen::Matrix2d::Identity(), 1e-15));

  const MetricData conf =
      metric_at(ManifoldModel::conformal_torus(0.1, 1), {Eigen::Vector2d(0.0, 0.0), 0});
  CHECK(conf.g.isApprox(std::exp(0.2) * Eigen::Matrix2d::Identity(), 1e-15));
}

TEST_CASE("metric_at rejects sphere points at a chart pole") {
  CHECK_THROWS_AS(metric_at(ManifoldModel::sphere(), {Eigen::Vector2d(1e-9, 0.0), 0}),
                  ChartDomainError);
  CHECK_THROWS_AS(metric_at(ManifoldModel::sphere(), {Eigen::Vector2d(kPi - 1e-9, 0.3), 1}),
                  ChartDomainError);
}

TEST_CASE("conformal amplitude outside [0, 0.5) is rejected") {
  CHECK_THROWS_AS(ManifoldModel::conformal_torus(0.5, 1), DomainError);
  CHECK_THROWS_AS(ManifoldModel::conformal_torus(-0.1, 1), DomainError);
}

TEST_CASE("conorm examples") {
  CotangentPoint p{Eigen::Vector2d(0.2, 0.4), Eigen::Vector2d(3, 4), 0};
  CHECK(conorm(ManifoldModel::flat_torus(), p) == doctest::Approx(5.0).epsilon(1e-15));
  CotangentPoint q{Eigen::Vector2d(kPi / 2, 0.0), Eigen::Vector2d(0, 1), 0};
  CHECK(conorm(ManifoldModel::sphere(), q) == doctest::Approx(1.0).epsilon(1e-15));
  CotangentPoint r{Eigen::Vector2d(0.0, 0.0), Eigen::Vector2d(1, 0), 0};
  // sqrt(exp(-2 phi)) with phi = 0.1
  CHECK(conorm(ManifoldModel::conformal_torus(0.1, 1), r) ==
        doctest::Approx(std::exp(-0.1)).epsilon(1e-15));
}

TEST_CASE("distance examples") {
  CHECK(distance(ManifoldModel::flat_torus(), {Eigen::Vector2d(0.1, 0.1), 0},
                 {Eigen::Vector2d(0.9, 0.1), 0}) == doctest::Approx(0.2).epsilon(1e-14));
  const BasePoint north = sphere_chart_point(Eigen::Vector3d(0, 0, 1), 1);
  const BasePoint south = sphere_chart_point(Eigen::Vector3d(0, 0, -1), 1);
  CHECK(distance(ManifoldModel::sphere(), north, south) == doctest::Approx(kPi).epsilon(1e-14));
}

TEST_CASE("g_inv * g is the identity and Christoffel symbols are symmetric") {
  std::mt19937_64 rng(7);
  for (const auto& m : all_models()) {
    for (int i = 0; i < 50; ++i) {
      const MetricData d = metric_at(m, random_point(m, rng));
      CHECK((d.g_inv * d.g - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
      for (int k = 0; k < 2; ++k)
        CHECK((d.christoffel[k] - d.christoffel[k].transpose()).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("closed-form Christoffel symbols match finite differences of g") {
  std::mt19937_64 rng(11);
  for (const auto& m : all_models()) {
    for (int i = 0; i < 20; ++i) {
      const BasePoint x = random_point(m, rng);
      const auto exact = metric_at(m, x).christoffel;
      const auto fd = christoffel_fd(m, x);
      for (int k = 0; k < 2; ++k) CHECK((exact[k] - fd[k]).cwiseAbs().maxCoeff() < 1e-7);
    }
  }
}

TEST_CASE("conorm is homogeneous of degree one") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (const auto& m : all_models()) {
    for (int i = 0; i < 30; ++i) {
      CotangentPoint p{random_point(m, rng).x, Eigen::Vector2d(n(rng), n(rng)), 0};
      const double c = n(rng) * 3;
      CotangentPoint q = p;
      q.xi *= c;
      CHECK(conorm(m, q) == doctest::Approx(std::abs(c) * conorm(m, p)).epsilon(1e-13));
    }
  }
}

TEST_CASE("unit_covector and covector_angle are inverse and unit length") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> a(-kPi, kPi);
  for (const auto& m : all_models()) {
    for (int i = 0; i < 30; ++i) {
      const double angle = a(rng);
      const CotangentPoint p = unit_covector(m, random_point(m, rng), angle);
      CHECK(conorm(m, p) == doctest::Approx(1.0).epsilon(1e-14));
      CHECK(std::abs(std::remainder(covector_angle(m, p) - angle, 2 * kPi)) < 1e-12);
    }
  }
}

TEST_CASE("sphere chart transition preserves the ambient lift") {
  std::mt19937_64 rng(9);
  const ManifoldModel s = ManifoldModel::sphere();
  for (int i = 0; i < 40; ++i) {
    const BasePoint b = random_point(s, rng);
    const CotangentPoint p = unit_covector(s, b, 0.7 * i);
    Eigen::Vector3d X, P;
    sphere_lift(p, X, P);
    const BasePoint other = sphere_chart_point(X, 1 - b.chart);
    if (other.x(0) < 0.05 || other.x(0) > kPi - 0.05) continue;
    const CotangentPoint q = sphere_from_lift(X, P, 1 - b.chart);
    Eigen::Vector3d X2, P2;
    sphere_lift(q, X2, P2);
    CHECK((X2 - X).norm() < 1e-13);
    CHECK((P2 - P).norm() < 1e-12);
    CHECK(conorm(s, q) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("distance is symmetric and satisfies the triangle inequality") {
  std::mt19937_64 rng(13);
  for (const auto& m : {ManifoldModel::sphere(), ManifoldModel::flat_torus(),
                        ManifoldModel::conformal_torus(0.1, 1)}) {
    const int trials = m.has_closed_form_flow() ? 50 : 4;
    for (int i = 0; i < trials; ++i) {
      const BasePoint a = random_point(m, rng), b = random_point(m, rng), c = random_point(m, rng);
      const double ab = distance(m, a, b), ba = distance(m, b, a);
      const double bc = distance(m, b, c), ac = distance(m, a, c);
      CHECK(std::abs(ab - ba) < 1e-6);
      CHECK(ac <= ab + bc + 1e-6);
    }
  }
}

TEST_CASE("conformal distance brackets the flat distance by the conformal factor") {
  const ManifoldModel m = ManifoldModel::conformal_torus(0.1, 1);
  const BasePoint a{Eigen::Vector2d(0.1, 0.2), 0}, b{Eigen::Vector2d(0.35, 0.6), 0};
  const double flat = distance(ManifoldModel::flat_torus(), a, b);
  const double d = distance(m, a, b);
  CHECK(d >= std::exp(-0.1) * flat - 1e-9);
  CHECK(d <= std::exp(0.1) * flat + 1e-9);
}

TEST_CASE("conformal torus with amplitude 0 agrees bit-for-bit with the flat torus") {
  const ManifoldModel flat = ManifoldModel::flat_torus();
  const ManifoldModel zero = ManifoldModel::conformal_torus(0.0, 3);
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const BasePoint a = random_point(flat, rng), b = random_point(flat, rng);
    const MetricData d0 = metric_at(flat, a), d1 = metric_at(zero, a);
    CHECK(d0.g == d1.g);
    CHECK(d0.g_inv == d1.g_inv);
    CHECK(d0.christoffel[0] == d1.christoffel[0]);
    CHECK(d0.christoffel[1] == d1.christoffel[1]);
    CotangentPoint p{a.x, Eigen::Vector2d(n(rng), n(rng)), 0};
    CHECK(conorm(flat, p) == conorm(zero, p));
    CHECK(distance(flat, a, b) == distance(zero, a, b));
  }
}
