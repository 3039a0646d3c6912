#pragma once

#include <array>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "eigavg/errors.hpp"

namespace eigavg {

template <typename Scalar>
using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Vec4 = Eigen::Matrix<Scalar, 4, 1>;
template <typename Scalar>
using Mat2 = Eigen::Matrix<Scalar, 2, 2>;

/// Phase-space point lifted to R^6, used for proximity tests.
using PhaseVector = Eigen::Matrix<double, 6, 1>;

enum class ManifoldKind { Sphere2, FlatTorus2, ConformalTorus2 };

/// Model surface. The conformal torus carries g = exp(2 phi) (dx1^2 + dx2^2)
/// with phi(x) = amplitude * cos(2 pi frequency x1).
struct ManifoldModel {
  ManifoldKind kind = ManifoldKind::FlatTorus2;
  double amplitude = 0.0;
  int frequency = 1;
  int dim = 2;

  static ManifoldModel sphere();
  static ManifoldModel flat_torus();
  static ManifoldModel conformal_torus(double amplitude, int frequency);

  void validate() const;
  bool is_torus() const { return kind != ManifoldKind::Sphere2; }
  /// True when the model is metrically the flat torus (conformal with amplitude 0).
  bool is_flat() const {
    return kind == ManifoldKind::FlatTorus2 ||
           (kind == ManifoldKind::ConformalTorus2 && amplitude == 0.0);
  }
  bool has_closed_form_flow() const { return kind == ManifoldKind::Sphere2 || is_flat(); }
};

/// Base point in a chart. Sphere charts: chart 0 has its poles on the z axis,
/// chart 1 on the x axis. Torus coordinates live in [0,1).
struct BasePoint {
  Eigen::Vector2d x = Eigen::Vector2d::Zero();
  int chart = 0;
};

struct CotangentPoint {
  Eigen::Vector2d x = Eigen::Vector2d::Zero();
  Eigen::Vector2d xi = Eigen::Vector2d::Zero();
  int chart = 0;

  BasePoint base() const { return {x, chart}; }
};

struct MetricData {
  Eigen::Matrix2d g;
  Eigen::Matrix2d g_inv;
  /// christoffel[i](j, k) = Gamma^i_{jk}
  std::array<Eigen::Matrix2d, 2> christoffel;
};

/// Chart rotations: embedding = A_chart * (chart-local unit vector).
const Eigen::Matrix3d& sphere_chart_rotation(int chart);

/// Angular distance to the chart poles below which the sphere chart is switched.
inline constexpr double kChartSwitchMargin = 0.2;
inline constexpr double kPoleGuard = 1e-8;

inline double wrap01(double v) {
  double r = v - std::floor(v);
  return r >= 1.0 ? 0.0 : r;
}
/// Signed representative of v modulo 1 in [-1/2, 1/2).
inline double wrap_half(double v) { return v - std::floor(v + 0.5); }

template <typename Scalar>
Scalar conformal_phi(const ManifoldModel& m, const Scalar& x1) {
  using std::cos;
  return Scalar(m.amplitude) * cos(Scalar(2.0 * std::numbers::pi * m.frequency) * x1);
}

/// Inverse metric in chart coordinates, templated for automatic differentiation.
template <typename Scalar>
Mat2<Scalar> inverse_metric(const ManifoldModel& m, const Vec2<Scalar>& x) {
  using std::exp;
  using std::sin;
  Mat2<Scalar> gi = Mat2<Scalar>::Zero();
  switch (m.kind) {
    case ManifoldKind::Sphere2: {
      Scalar s = sin(x(0));
      gi(0, 0) = Scalar(1);
      gi(1, 1) = Scalar(1) / (s * s);
      break;
    }
    case ManifoldKind::FlatTorus2:
      gi(0, 0) = gi(1, 1) = Scalar(1);
      break;
    case ManifoldKind::ConformalTorus2: {
      if (m.amplitude == 0.0) {
        gi(0, 0) = gi(1, 1) = Scalar(1);
      } else {
        Scalar f = exp(Scalar(-2) * conformal_phi(m, x(0)));
        gi(0, 0) = gi(1, 1) = f;
      }
      break;
    }
  }
  return gi;
}

/// Hamilton vector field of p = |xi|_g^2 / 2 in chart coordinates, state = (x, xi).
/// On the unit cosphere bundle this is the geodesic flow.
template <typename Scalar>
Vec4<Scalar> hamilton_rhs(const ManifoldModel& m, const Vec4<Scalar>& s) {
  using std::cos;
  using std::exp;
  using std::sin;
  Vec4<Scalar> out;
  const Scalar x1 = s(0);
  const Scalar xi1 = s(2), xi2 = s(3);
  switch (m.kind) {
    case ManifoldKind::Sphere2: {
      Scalar st = sin(x1), ct = cos(x1);
      out(0) = xi1;
      out(1) = xi2 / (st * st);
      out(2) = xi2 * xi2 * ct / (st * st * st);
      out(3) = Scalar(0);
      break;
    }
    case ManifoldKind::FlatTorus2:
      out << xi1, xi2, Scalar(0), Scalar(0);
      break;
    case ManifoldKind::ConformalTorus2: {
      if (m.amplitude == 0.0) {
        out << xi1, xi2, Scalar(0), Scalar(0);
        break;
      }
      const double k = 2.0 * std::numbers::pi * m.frequency;
      Scalar phi = conformal_phi(m, x1);
      Scalar dphi = Scalar(-m.amplitude * k) * sin(Scalar(k) * x1);
      Scalar e = exp(Scalar(-2) * phi);
      Scalar sq = xi1 * xi1 + xi2 * xi2;
      out(0) = e * xi1;
      out(1) = e * xi2;
      out(2) = sq * e * dphi;
      out(3) = Scalar(0);
      break;
    }
  }
  return out;
}

MetricData metric_at(const ManifoldModel& m, const BasePoint& x);
double conorm(const ManifoldModel& m, const CotangentPoint& p);
double gauss_curvature(const ManifoldModel& m, const BasePoint& x);

struct ShootingOptions {
  int max_iterations = 60;
  double tolerance = 1e-11;
  int lattice_radius = 1;
  int angle_seeds = 8;
};

double distance(const ManifoldModel& m, const BasePoint& a, const BasePoint& b,
                const ShootingOptions& opts = {});

/// Unit covector making angle `angle` with the first orthonormal frame vector
/// of g^{1/2} at x.
CotangentPoint unit_covector(const ManifoldModel& m, const BasePoint& x, double angle);
/// Inverse of unit_covector (angle in (-pi, pi]).
double covector_angle(const ManifoldModel& m, const CotangentPoint& p);

/// Embedding of a sphere base point into R^3.
Eigen::Vector3d sphere_embed(const BasePoint& x);
/// Chart coordinates of X in the requested chart.
BasePoint sphere_chart_point(const Eigen::Vector3d& X, int chart);
/// Best chart for X: keep `preferred` unless X is within the switch margin of its poles.
int sphere_pick_chart(const Eigen::Vector3d& X, int preferred);
/// Ambient (X, P) lift of a sphere cotangent point, P the metric dual of xi.
void sphere_lift(const CotangentPoint& p, Eigen::Vector3d& X, Eigen::Vector3d& P);
CotangentPoint sphere_from_lift(const Eigen::Vector3d& X, const Eigen::Vector3d& P, int chart);

/// Wraps torus coordinates and switches sphere charts near poles.
CotangentPoint normalize_chart(const ManifoldModel& m, const CotangentPoint& p);

/// Lift into R^6: sphere (X, P); torus (periodic position embedding / 2pi, xi).
PhaseVector phase_embed(const ManifoldModel& m, const CotangentPoint& p);
double phase_distance(const ManifoldModel& m, const CotangentPoint& a, const CotangentPoint& b);

}  // namespace eigavg
