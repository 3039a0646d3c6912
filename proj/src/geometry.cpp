#include "eigavg/geometry.hpp"

#include <algorithm>
#include <limits>

#include <unsupported/Eigen/AutoDiff>

namespace eigavg {

namespace {

constexpr double kPi = std::numbers::pi;

void check_sphere_chart(const BasePoint& x) {
  const double theta = x.x(0);
  if (theta < kPoleGuard || theta > kPi - kPoleGuard) {
    throw ChartDomainError("sphere point within 1e-8 of a pole of chart " +
                           std::to_string(x.chart));
  }
}

}  // namespace

ManifoldModel ManifoldModel::sphere() { return {ManifoldKind::Sphere2, 0.0, 1, 2}; }

ManifoldModel ManifoldModel::flat_torus() { return {ManifoldKind::FlatTorus2, 0.0, 1, 2}; }

ManifoldModel ManifoldModel::conformal_torus(double amplitude, int frequency) {
  ManifoldModel m{ManifoldKind::ConformalTorus2, amplitude, frequency, 2};
  m.validate();
  return m;
}

void ManifoldModel::validate() const {
  if (dim < 2) throw DomainError("manifold dimension must be >= 2");
  if (dim != 2) throw DomainError("only two-dimensional models are built in");
  if (kind == ManifoldKind::ConformalTorus2) {
    if (!(amplitude >= 0.0 && amplitude < 0.5))
      throw DomainError("conformal amplitude must lie in [0, 0.5)");
    if (frequency < 1) throw DomainError("conformal frequency must be >= 1");
  }
}

const Eigen::Matrix3d& sphere_chart_rotation(int chart) {
  static const Eigen::Matrix3d identity = Eigen::Matrix3d::Identity();
  // (u, v, w) -> (w, u, v): poles of chart 1 sit on the x axis.
  static const Eigen::Matrix3d cyclic = [] {
    Eigen::Matrix3d a = Eigen::Matrix3d::Zero();
    a(0, 2) = 1.0;
    a(1, 0) = 1.0;
    a(2, 1) = 1.0;
    return a;
  }();
  return chart == 0 ? identity : cyclic;
}

MetricData metric_at(const ManifoldModel& m, const BasePoint& x) {
  MetricData d;
  d.christoffel[0].setZero();
  d.christoffel[1].setZero();
  switch (m.kind) {
    case ManifoldKind::Sphere2: {
      check_sphere_chart(x);
      const double st = std::sin(x.x(0)), ct = std::cos(x.x(0));
      d.g = Eigen::Vector2d(1.0, st * st).asDiagonal();
      d.g_inv = Eigen::Vector2d(1.0, 1.0 / (st * st)).asDiagonal();
      d.christoffel[0](1, 1) = -st * ct;
      d.christoffel[1](0, 1) = d.christoffel[1](1, 0) = ct / st;
      break;
    }
    case ManifoldKind::FlatTorus2:
      d.g.setIdentity();
      d.g_inv.setIdentity();
      break;
    case ManifoldKind::ConformalTorus2: {
      if (m.amplitude == 0.0) {
        d.g.setIdentity();
        d.g_inv.setIdentity();
        break;
      }
      const double k = 2.0 * kPi * m.frequency;
      const double phi = conformal_phi(m, x.x(0));
      const double e = std::exp(2.0 * phi);
      d.g = e * Eigen::Matrix2d::Identity();
      d.g_inv = (1.0 / e) * Eigen::Matrix2d::Identity();
      // Gamma^i_jk = delta_ij d_k phi + delta_ik d_j phi - delta_jk d_i phi, d_2 phi = 0.
      const Eigen::Vector2d dphi(-m.amplitude * k * std::sin(k * x.x(0)), 0.0);
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
          for (int l = 0; l < 2; ++l)
            d.christoffel[i](j, l) = (i == j ? dphi(l) : 0.0) + (i == l ? dphi(j) : 0.0) -
                                     (j == l ? dphi(i) : 0.0);
      break;
    }
  }
  return d;
}

double conorm(const ManifoldModel& m, const CotangentPoint& p) {
  const Eigen::Matrix2d gi = inverse_metric<double>(m, p.x);
  return std::sqrt(p.xi.dot(gi * p.xi));
}

double gauss_curvature(const ManifoldModel& m, const BasePoint& x) {
  switch (m.kind) {
    case ManifoldKind::Sphere2:
      return 1.0;
    case ManifoldKind::FlatTorus2:
      return 0.0;
    case ManifoldKind::ConformalTorus2: {
      if (m.amplitude == 0.0) return 0.0;
      // K = -exp(-2 phi) Laplacian(phi)
      const double k = 2.0 * kPi * m.frequency;
      const double phi = conformal_phi(m, x.x(0));
      return std::exp(-2.0 * phi) * m.amplitude * k * k * std::cos(k * x.x(0));
    }
  }
  return 0.0;
}

Eigen::Vector3d sphere_embed(const BasePoint& x) {
  const double st = std::sin(x.x(0));
  Eigen::Vector3d local(st * std::cos(x.x(1)), st * std::sin(x.x(1)), std::cos(x.x(0)));
  return sphere_chart_rotation(x.chart) * local;
}

BasePoint sphere_chart_point(const Eigen::Vector3d& X, int chart) {
  const Eigen::Vector3d y = sphere_chart_rotation(chart).transpose() * X;
  BasePoint b;
  b.chart = chart;
  b.x(0) = std::atan2(std::hypot(y(0), y(1)), y(2));
  b.x(1) = std::atan2(y(1), y(0));
  return b;
}

int sphere_pick_chart(const Eigen::Vector3d& X, int preferred) {
  const double theta = sphere_chart_point(X, preferred).x(0);
  if (theta > kChartSwitchMargin && theta < kPi - kChartSwitchMargin) return preferred;
  return 1 - preferred;
}

void sphere_lift(const CotangentPoint& p, Eigen::Vector3d& X, Eigen::Vector3d& P) {
  check_sphere_chart(p.base());
  const double th = p.x(0), ph = p.x(1);
  const double st = std::sin(th), ct = std::cos(th), sp = std::sin(ph), cp = std::cos(ph);
  const Eigen::Matrix3d& a = sphere_chart_rotation(p.chart);
  const Eigen::Vector3d e_th(ct * cp, ct * sp, -st);
  const Eigen::Vector3d e_ph(-st * sp, st * cp, 0.0);
  X = a * Eigen::Vector3d(st * cp, st * sp, ct);
  P = a * (p.xi(0) * e_th + (p.xi(1) / (st * st)) * e_ph);
}

CotangentPoint sphere_from_lift(const Eigen::Vector3d& X, const Eigen::Vector3d& P, int chart) {
  const BasePoint b = sphere_chart_point(X, chart);
  check_sphere_chart(b);
  const double th = b.x(0), ph = b.x(1);
  const double st = std::sin(th), ct = std::cos(th), sp = std::sin(ph), cp = std::cos(ph);
  const Eigen::Vector3d q = sphere_chart_rotation(chart).transpose() * P;
  CotangentPoint p;
  p.chart = chart;
  p.x = b.x;
  p.xi(0) = q.dot(Eigen::Vector3d(ct * cp, ct * sp, -st));
  p.xi(1) = q.dot(Eigen::Vector3d(-st * sp, st * cp, 0.0));
  return p;
}

CotangentPoint normalize_chart(const ManifoldModel& m, const CotangentPoint& p) {
  if (m.is_torus()) {
    CotangentPoint q = p;
    q.x(0) = wrap01(p.x(0));
    q.x(1) = wrap01(p.x(1));
    q.chart = 0;
    return q;
  }
  Eigen::Vector3d X, P;
  sphere_lift(p, X, P);
  return sphere_from_lift(X, P, sphere_pick_chart(X, p.chart));
}

CotangentPoint unit_covector(const ManifoldModel& m, const BasePoint& x, double angle) {
  CotangentPoint p;
  p.x = x.x;
  p.chart = x.chart;
  const Eigen::Vector2d dir(std::cos(angle), std::sin(angle));
  switch (m.kind) {
    case ManifoldKind::Sphere2:
      check_sphere_chart(x);
      p.xi = Eigen::Vector2d(dir(0), std::sin(x.x(0)) * dir(1));
      break;
    case ManifoldKind::FlatTorus2:
      p.xi = dir;
      break;
    case ManifoldKind::ConformalTorus2:
      p.xi = m.amplitude == 0.0 ? dir : std::exp(conformal_phi(m, x.x(0))) * dir;
      break;
  }
  return p;
}

double covector_angle(const ManifoldModel& m, const CotangentPoint& p) {
  switch (m.kind) {
    case ManifoldKind::Sphere2:
      return std::atan2(p.xi(1) / std::sin(p.x(0)), p.xi(0));
    case ManifoldKind::FlatTorus2:
      return std::atan2(p.xi(1), p.xi(0));
    case ManifoldKind::ConformalTorus2:
      return std::atan2(p.xi(1), p.xi(0));
  }
  return 0.0;
}

PhaseVector phase_embed(const ManifoldModel& m, const CotangentPoint& p) {
  PhaseVector v;
  if (m.is_torus()) {
    constexpr double tau = 2.0 * kPi;
    v << std::cos(tau * p.x(0)) / tau, std::sin(tau * p.x(0)) / tau, std::cos(tau * p.x(1)) / tau,
        std::sin(tau * p.x(1)) / tau, p.xi(0), p.xi(1);
    return v;
  }
  Eigen::Vector3d X, P;
  sphere_lift(p, X, P);
  v << X, P;
  return v;
}

double phase_distance(const ManifoldModel& m, const CotangentPoint& a, const CotangentPoint& b) {
  if (m.is_torus()) {
    const double dx = wrap_half(a.x(0) - b.x(0));
    const double dy = wrap_half(a.x(1) - b.x(1));
    return std::sqrt(dx * dx + dy * dy + (a.xi - b.xi).squaredNorm());
  }
  return (phase_embed(m, a) - phase_embed(m, b)).norm();
}

// ---------------------------------------------------------------------------
// Geodesic distance

namespace {

using Dual = Eigen::AutoDiffScalar<Eigen::Vector4d>;

struct ShotResult {
  Eigen::Vector2d end;       // unwrapped end position
  Eigen::Matrix2d d_dxi;     // d end / d xi0
  Eigen::Vector2d velocity;  // d end / d t
};

// RK4 on the Hamilton equations plus variational equations, unwrapped coordinates.
ShotResult shoot(const ManifoldModel& m, const Eigen::Vector4d& s0, double length) {
  const int steps = std::max(50, static_cast<int>(std::ceil(length / 2e-3)));
  const double dt = length / steps;
  Eigen::Vector4d s = s0;
  Eigen::Matrix4d jac = Eigen::Matrix4d::Identity();
  auto eval = [&](const Eigen::Vector4d& y, Eigen::Vector4d& f, Eigen::Matrix4d& a) {
    Vec4<Dual> yd;
    for (int i = 0; i < 4; ++i) yd(i) = Dual(y(i), 4, i);
    const Vec4<Dual> fd = hamilton_rhs<Dual>(m, yd);
    for (int i = 0; i < 4; ++i) {
      f(i) = fd(i).value();
      a.row(i) = fd(i).derivatives().transpose();
    }
  };
  Eigen::Vector4d k1, k2, k3, k4;
  Eigen::Matrix4d a1, a2, a3, a4;
  for (int i = 0; i < steps; ++i) {
    eval(s, k1, a1);
    const Eigen::Matrix4d j1 = a1 * jac;
    eval(s + 0.5 * dt * k1, k2, a2);
    const Eigen::Matrix4d j2 = a2 * (jac + 0.5 * dt * j1);
    eval(s + 0.5 * dt * k2, k3, a3);
    const Eigen::Matrix4d j3 = a3 * (jac + 0.5 * dt * j2);
    eval(s + dt * k3, k4, a4);
    const Eigen::Matrix4d j4 = a4 * (jac + dt * j3);
    s += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    jac += dt / 6.0 * (j1 + 2.0 * j2 + 2.0 * j3 + j4);
  }
  ShotResult r;
  r.end = s.head<2>();
  r.d_dxi = jac.block<2, 2>(0, 2);
  r.velocity = hamilton_rhs<double>(m, s).head<2>();
  return r;
}

double torus_flat_distance(const BasePoint& a, const BasePoint& b) {
  const double dx = wrap_half(a.x(0) - b.x(0));
  const double dy = wrap_half(a.x(1) - b.x(1));
  return std::sqrt(dx * dx + dy * dy);
}

double conformal_distance(const ManifoldModel& m, const BasePoint& a, const BasePoint& b,
                          const ShootingOptions& opts) {
  const Eigen::Vector2d base(wrap01(a.x(0)), wrap01(a.x(1)));
  const Eigen::Vector2d goal(wrap01(b.x(0)), wrap01(b.x(1)));
  if ((base - goal).norm() == 0.0) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  const double emax = std::exp(m.amplitude), emin = std::exp(-m.amplitude);
  for (int kx = -opts.lattice_radius; kx <= opts.lattice_radius; ++kx) {
    for (int ky = -opts.lattice_radius; ky <= opts.lattice_radius; ++ky) {
      const Eigen::Vector2d target = goal + Eigen::Vector2d(kx, ky);
      const Eigen::Vector2d chord = target - base;
      // Any geodesic shorter than the current best must start inside this cone of lengths.
      if (emin * chord.norm() > best) continue;
      const double straight = std::atan2(chord(1), chord(0));
      for (int seed = 0; seed <= opts.angle_seeds; ++seed) {
        double angle = straight + (seed == 0 ? 0.0 : 2.0 * kPi * seed / (opts.angle_seeds + 1));
        double len = chord.norm() * (emax + emin) * 0.5;
        bool converged = false;
        for (int it = 0; it < opts.max_iterations; ++it) {
          const CotangentPoint p0 = unit_covector(m, {base, 0}, angle);
          Eigen::Vector4d s0;
          s0 << base, p0.xi;
          const ShotResult r = shoot(m, s0, len);
          const Eigen::Vector2d res = r.end - target;
          if (res.norm() < opts.tolerance) {
            converged = true;
            break;
          }
          const Eigen::Vector2d dxi_dangle = std::exp(conformal_phi(m, base(0))) *
                                             Eigen::Vector2d(-std::sin(angle), std::cos(angle));
          Eigen::Matrix2d jn;
          jn.col(0) = r.d_dxi * dxi_dangle;
          jn.col(1) = r.velocity;
          const Eigen::Vector2d step = jn.fullPivLu().solve(-res);
          if (!step.allFinite()) break;
          const double damp = std::min(1.0, 0.25 / std::max(1e-300, step.cwiseAbs().maxCoeff()));
          angle += damp * step(0);
          len += damp * step(1);
          if (len <= 0.0) break;
        }
        if (converged) best = std::min(best, len);
      }
    }
  }
  if (!std::isfinite(best)) throw ConvergenceError("geodesic shooting failed to converge");
  return best;
}

}  // namespace

double distance(const ManifoldModel& m, const BasePoint& a, const BasePoint& b,
                const ShootingOptions& opts) {
  switch (m.kind) {
    case ManifoldKind::Sphere2: {
      const Eigen::Vector3d xa = sphere_embed(a), xb = sphere_embed(b);
      return std::atan2(xa.cross(xb).norm(), xa.dot(xb));
    }
    case ManifoldKind::FlatTorus2:
      return torus_flat_distance(a, b);
    case ManifoldKind::ConformalTorus2:
      if (m.amplitude == 0.0) return torus_flat_distance(a, b);
      return conformal_distance(m, a, b, opts);
  }
  return 0.0;
}

}  // namespace eigavg
