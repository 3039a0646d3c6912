#pragma once

#include <functional>
#include <iosfwd>
#include <vector>

#include "eigavg/geometry.hpp"

namespace eigavg {

enum class SubmanifoldKind { Point, ClosedGeodesic, LatitudeCircle, ParamCurve };

/// Quadrature node of sigma_H. For curves `velocity` is the unit-speed
/// coordinate tangent and `param` the arclength position.
struct QuadNode {
  BasePoint x;
  double weight = 0.0;
  Eigen::Vector2d velocity = Eigen::Vector2d::Zero();
  double param = 0.0;
};

/// Weighted sample of SN*H. `param` is the covector angle for a point and
/// the arclength for a curve; `branch` is 0 for a point and +1/-1 for curves.
struct ConormalSample {
  CotangentPoint rho;
  double weight = 0.0;
  int base_index = 0;
  int branch = 0;
  double param = 0.0;
};

struct ConormalDistance {
  double distance = 0.0;
  double param = 0.0;
  int branch = 0;
};

class Submanifold {
 public:
  static Submanifold point(const ManifoldModel& m, const BasePoint& x);
  /// Closed geodesic traced by G^s(p0), s in [0, length). p0 must be unit.
  static Submanifold closed_geodesic(const ManifoldModel& m, const CotangentPoint& p0,
                                     double length);
  /// Circle theta = theta0 on the round sphere (chart 0).
  static Submanifold latitude_circle(double theta0);
  /// Periodic cubic spline through chart-0 nodes (closed by convention).
  static Submanifold param_curve(const ManifoldModel& m, std::vector<Eigen::Vector2d> nodes);
  /// Reads `x1,x2` rows (an optional header line is skipped).
  static Submanifold read_curve_csv(const ManifoldModel& m, std::istream& in);

  const ManifoldModel& manifold() const { return m_; }
  SubmanifoldKind kind() const { return kind_; }
  int codim() const { return kind_ == SubmanifoldKind::Point ? m_.dim : m_.dim - 1; }
  /// Length for curves, 1 for a point (counting measure).
  double volume() const { return kind_ == SubmanifoldKind::Point ? 1.0 : length_; }
  /// Period of the sample parameter: 2 pi for a point, the length for curves.
  double param_period() const;
  /// K_H: 1.5 times the largest geodesic curvature found on a dense node set.
  double curvature_bound() const { return curvature_bound_; }

  /// Uniform-in-arclength quadrature with `count` nodes; a point gives one unit node.
  std::vector<QuadNode> quadrature(int count) const;
  QuadNode node_at(double s) const;
  double geodesic_curvature(double s) const;

  /// Unit conormal at parameter `param`; branch is ignored for a point.
  CotangentPoint conormal_at(double param, int branch) const;

  /// Distance in the phase lift from p to SN*H, with the nearest parameter.
  ConormalDistance conormal_distance(const CotangentPoint& p) const;

 private:
  struct Spline {
    std::vector<Eigen::Vector2d> y;     // periodic part at integer knots
    std::vector<Eigen::Vector2d> m2;    // second derivatives
    Eigen::Vector2d winding = Eigen::Vector2d::Zero();
    std::vector<double> cumulative;     // arclength at knots, size N + 1
  };

  Submanifold() = default;
  void finalize();
  double spline_speed(double u) const;
  void spline_eval(double u, Eigen::Vector2d& c, Eigen::Vector2d& d1, Eigen::Vector2d& d2) const;
  double spline_param_of_arclength(double s) const;
  ConormalDistance refine(const CotangentPoint& p, const ConormalDistance& seed,
                          double halfwidth) const;
  ConormalDistance generic_distance(const CotangentPoint& p) const;
  ConormalDistance flat_line_distance(const CotangentPoint& p) const;
  ConormalDistance great_circle_distance(const CotangentPoint& p) const;
  ConormalDistance latitude_distance(const CotangentPoint& p) const;
  ConormalDistance point_distance(const CotangentPoint& p) const;

  ManifoldModel m_;
  SubmanifoldKind kind_ = SubmanifoldKind::Point;
  BasePoint x0_;
  CotangentPoint p0_;
  double theta0_ = 0.0;
  double length_ = 0.0;
  double curvature_bound_ = 0.0;
  Spline spline_;
  // Flat-torus closed geodesic data: direction (p, q) and Bezout coefficients.
  bool flat_line_ = false;
  Eigen::Vector2i lattice_dir_ = Eigen::Vector2i::Zero();
  Eigen::Vector2i bezout_ = Eigen::Vector2i::Zero();
  // Dense table for the generic nearest-parameter search.
  std::vector<double> table_s_;
  std::vector<PhaseVector> table_plus_, table_minus_;
};

/// Samples of SN*H with `density` samples per unit angle or length (density >= 4).
std::vector<ConormalSample> sample_conormal(const Submanifold& H, double density);

double conormal_measure(const std::vector<ConormalSample>& samples,
                        const std::function<bool(const ConormalSample&)>& A);

struct InjectivityGrid {
  double time_step = 0.01;
  /// Half of the smallest downstream tube radius.
  double collision_tol = 0.02;
  int levels = 8;
};

/// Largest dyadic tau <= T_probe such that the sampled flow-out
/// psi(t, q), |t| < tau, has no collisions between parameter-distant samples.
double injectivity_time(const Submanifold& H, const std::vector<ConormalSample>& samples,
                        const InjectivityGrid& grid = {}, double T_probe = 1.0);

}  // namespace eigavg
