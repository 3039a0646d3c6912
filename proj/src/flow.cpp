#include "eigavg/flow.hpp"

#include <algorithm>
#include <cmath>

#include <unsupported/Eigen/AutoDiff>

namespace eigavg {

namespace {

using Dual = Eigen::AutoDiffScalar<Eigen::Vector4d>;
constexpr double kPi = std::numbers::pi;

// Great-circle rotation of the ambient lift, generic in the scalar so that the
// same code yields dG^t under automatic differentiation.
template <typename S>
Vec4<S> sphere_closed_form(const Vec4<S>& s, double t, int chart_in, int chart_out) {
  using std::atan2;
  using std::cos;
  using std::sin;
  using std::sqrt;
  const S st = sin(s(0)), ct = cos(s(0)), sp = sin(s(1)), cp = cos(s(1));
  const Eigen::Matrix<S, 3, 3> a_in = sphere_chart_rotation(chart_in).cast<S>();
  const Eigen::Matrix<S, 3, 3> a_out = sphere_chart_rotation(chart_out).cast<S>();
  Vec3<S> e_th, e_ph, x_loc;
  e_th << ct * cp, ct * sp, -st;
  e_ph << -st * sp, st * cp, S(0);
  x_loc << st * cp, st * sp, ct;
  const Vec3<S> X = a_in * x_loc;
  const Vec3<S> P = a_in * (s(2) * e_th + (s(3) / (st * st)) * e_ph);
  const S r = sqrt(P.dot(P));
  const S c = cos(r * S(t)), sn = sin(r * S(t));
  const Vec3<S> X1 = X * c + P * (sn / r);
  const Vec3<S> P1 = P * c - X * (r * sn);
  const Vec3<S> y = a_out.transpose() * X1;
  const Vec3<S> q = a_out.transpose() * P1;
  Vec4<S> out;
  out(0) = atan2(sqrt(y(0) * y(0) + y(1) * y(1)), y(2));
  out(1) = atan2(y(1), y(0));
  const S st1 = sin(out(0)), ct1 = cos(out(0)), sp1 = sin(out(1)), cp1 = cos(out(1));
  Vec3<S> f_th, f_ph;
  f_th << ct1 * cp1, ct1 * sp1, -st1;
  f_ph << -st1 * sp1, st1 * cp1, S(0);
  out(2) = q.dot(f_th);
  out(3) = q.dot(f_ph);
  return out;
}

Eigen::Vector4d pack(const CotangentPoint& p) {
  Eigen::Vector4d s;
  s << p.x, p.xi;
  return s;
}

CotangentPoint unpack(const Eigen::Vector4d& s, int chart) {
  CotangentPoint p;
  p.x = s.head<2>();
  p.xi = s.tail<2>();
  p.chart = chart;
  return p;
}

int sphere_end_chart(const CotangentPoint& p, double t) {
  Eigen::Vector3d X, P;
  sphere_lift(p, X, P);
  const double r = P.norm();
  const Eigen::Vector3d X1 = X * std::cos(r * t) + P * (std::sin(r * t) / r);
  return sphere_pick_chart(X1, p.chart);
}

FlowState sphere_flow(const CotangentPoint& p, double t, bool with_jac) {
  if (p.xi.squaredNorm() == 0.0) throw DomainError("geodesic flow needs a nonzero covector");
  const int out_chart = sphere_end_chart(p, t);
  FlowState st;
  st.t = t;
  st.chart_switches = out_chart != p.chart ? 1 : 0;
  if (!with_jac) {
    st.p = unpack(sphere_closed_form<double>(pack(p), t, p.chart, out_chart), out_chart);
    return st;
  }
  Vec4<Dual> sd;
  const Eigen::Vector4d s0 = pack(p);
  for (int i = 0; i < 4; ++i) sd(i) = Dual(s0(i), 4, i);
  const Vec4<Dual> r = sphere_closed_form<Dual>(sd, t, p.chart, out_chart);
  Eigen::Vector4d v;
  for (int i = 0; i < 4; ++i) {
    v(i) = r(i).value();
    st.jac.row(i) = r(i).derivatives().transpose();
  }
  st.p = unpack(v, out_chart);
  return st;
}

FlowState flat_flow(const CotangentPoint& p, double t) {
  FlowState st;
  st.t = t;
  st.p = p;
  st.p.x(0) = wrap01(p.x(0) + t * p.xi(0));
  st.p.x(1) = wrap01(p.x(1) + t * p.xi(1));
  st.p.chart = 0;
  st.jac.setIdentity();
  st.jac.block<2, 2>(0, 2) = t * Eigen::Matrix2d::Identity();
  return st;
}

// --- numeric integrator ------------------------------------------------------

struct Integration {
  Eigen::Vector4d s;
  PhaseMatrix jac;
};

void rhs_with_jacobian(const ManifoldModel& m, const Eigen::Vector4d& y, Eigen::Vector4d& f,
                       PhaseMatrix& a) {
  Vec4<Dual> yd;
  for (int i = 0; i < 4; ++i) yd(i) = Dual(y(i), 4, i);
  const Vec4<Dual> fd = hamilton_rhs<Dual>(m, yd);
  for (int i = 0; i < 4; ++i) {
    f(i) = fd(i).value();
    a.row(i) = fd(i).derivatives().transpose();
  }
}

// One implicit midpoint step; on request the exact derivative of the discrete map.
void implicit_midpoint(const ManifoldModel& m, Eigen::Vector4d& y, double h, PhaseMatrix* jac) {
  Eigen::Vector4d y1 = y + h * hamilton_rhs<double>(m, y);
  for (int it = 0; it < 100; ++it) {
    const Eigen::Vector4d next = y + h * hamilton_rhs<double>(m, 0.5 * (y + y1));
    const double change = (next - y1).cwiseAbs().maxCoeff();
    y1 = next;
    if (change <= 1e-15 * (1.0 + y.cwiseAbs().maxCoeff())) break;
  }
  if (jac != nullptr) {
    Eigen::Vector4d f;
    PhaseMatrix a;
    rhs_with_jacobian(m, 0.5 * (y + y1), f, a);
    const PhaseMatrix id = PhaseMatrix::Identity();
    *jac = (id - 0.5 * h * a).partialPivLu().solve((id + 0.5 * h * a) * (*jac));
  }
  y = y1;
}

// Triple-jump composition: symmetric, fourth order.
const double kW1 = 1.0 / (2.0 - std::cbrt(2.0));
const double kW0 = -std::cbrt(2.0) / (2.0 - std::cbrt(2.0));

Integration integrate(const ManifoldModel& m, const Eigen::Vector4d& s0, double t, long steps,
                      bool with_jac, bool renormalize) {
  Integration out{s0, PhaseMatrix::Identity()};
  const double h = t / static_cast<double>(steps);
  const double energy0 = s0.tail<2>().dot(inverse_metric<double>(m, s0.head<2>().eval()) *
                                          s0.tail<2>());
  PhaseMatrix* jac = with_jac ? &out.jac : nullptr;
  for (long i = 0; i < steps; ++i) {
    implicit_midpoint(m, out.s, kW1 * h, jac);
    implicit_midpoint(m, out.s, kW0 * h, jac);
    implicit_midpoint(m, out.s, kW1 * h, jac);
    if (renormalize) {
      const double e = out.s.tail<2>().dot(inverse_metric<double>(m, out.s.head<2>().eval()) *
                                           out.s.tail<2>());
      out.s.tail<2>() *= std::sqrt(energy0 / e);
    }
  }
  return out;
}

FlowState numeric_flow(const ManifoldModel& m, const CotangentPoint& p, double t,
                       const FlowConfig& cfg, bool with_jac) {
  FlowState st;
  st.t = t;
  if (t == 0.0) {
    st.p = p;
    return st;
  }
  const Eigen::Vector4d s0 = pack(p);
  long steps = std::max<long>(1, static_cast<long>(std::ceil(std::abs(t) / cfg.step)));
  Integration coarse = integrate(m, s0, t, steps, false, cfg.renormalize);
  Integration fine{};
  bool accepted = false;
  for (int halving = 0; halving <= cfg.max_halvings; ++halving) {
    fine = integrate(m, s0, t, 2 * steps, with_jac, cfg.renormalize);
    if ((fine.s - coarse.s).cwiseAbs().maxCoeff() <= cfg.tol) {
      accepted = true;
      break;
    }
    steps *= 2;
    coarse = fine;
  }
  if (!accepted) throw ToleranceError("step halving cap reached before meeting flow tolerance");
  const double n0 = conorm(m, p);
  CotangentPoint end = unpack(fine.s, 0);
  const double n1 = std::sqrt(end.xi.dot(inverse_metric<double>(m, end.x) * end.xi));
  if (std::abs(n1 - n0) > 10.0 * cfg.tol * std::max(1.0, n0))
    throw ToleranceError("energy drift exceeds 10 * tol");
  end.x(0) = wrap01(end.x(0));
  end.x(1) = wrap01(end.x(1));
  st.p = end;
  st.jac = fine.jac;
  return st;
}

FlowState dispatch(const ManifoldModel& m, const CotangentPoint& p, double t,
                   const FlowConfig& cfg, bool with_jac) {
  switch (m.kind) {
    case ManifoldKind::Sphere2:
      return sphere_flow(p, t, with_jac);
    case ManifoldKind::FlatTorus2:
      return flat_flow(p, t);
    case ManifoldKind::ConformalTorus2:
      if (m.amplitude == 0.0) return flat_flow(p, t);
      return numeric_flow(m, p, t, cfg, with_jac);
  }
  return {};
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

void FlowConfig::validate() const {
  if (!(step > 0.0 && step <= 0.1)) throw DomainError("flow.step must lie in (0, 0.1]");
  if (!(tol > 0.0 && tol <= 1e-6)) throw DomainError("flow.tol must lie in (0, 1e-6]");
}

FlowState geodesic_flow(const ManifoldModel& m, const CotangentPoint& p, double t,
                        const FlowConfig& cfg) {
  cfg.validate();
  return dispatch(m, p, t, cfg, true);
}

CotangentPoint flow_point(const ManifoldModel& m, const CotangentPoint& p, double t,
                          const FlowConfig& cfg) {
  return dispatch(m, p, t, cfg, false).p;
}

PhaseMatrix tangent_flow(const ManifoldModel& m, const CotangentPoint& p, double t,
                         const FlowConfig& cfg) {
  return geodesic_flow(m, p, t, cfg).jac;
}

Eigen::Vector3d quasi_random3(std::uint64_t index, std::uint64_t seed) {
  // g solves g^4 = g + 1
  constexpr double g = 1.2207440846057594753616853491088319144324890862486;
  const Eigen::Vector3d alpha(1.0 / g, 1.0 / (g * g), 1.0 / (g * g * g));
  const std::uint64_t h = splitmix64(seed);
  const Eigen::Vector3d offset(static_cast<double>(h >> 11) * 0x1.0p-53,
                               static_cast<double>(splitmix64(h) >> 11) * 0x1.0p-53,
                               static_cast<double>(splitmix64(h + 1) >> 11) * 0x1.0p-53);
  Eigen::Vector3d u;
  for (int i = 0; i < 3; ++i) u(i) = wrap01(offset(i) + static_cast<double>(index) * alpha(i));
  return u;
}

CotangentPoint quasi_random_unit_covector(const ManifoldModel& m, std::uint64_t index,
                                          std::uint64_t seed) {
  const Eigen::Vector3d u = quasi_random3(index, seed);
  const double angle = 2.0 * kPi * u(2);
  if (m.is_torus()) return unit_covector(m, {Eigen::Vector2d(u(0), u(1)), 0}, angle);
  const double z = 2.0 * u(0) - 1.0, ph = 2.0 * kPi * u(1);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  const Eigen::Vector3d X(r * std::cos(ph), r * std::sin(ph), z);
  return unit_covector(m, sphere_chart_point(X, sphere_pick_chart(X, 0)), angle);
}

double max_expansion_rate(const ManifoldModel& m, int sample_count, double T_max,
                          std::uint64_t seed, const ExpansionOptions& opts) {
  if (sample_count < 1) throw DomainError("sample_count must be >= 1");
  if (!(T_max > 0.0)) throw DomainError("T_max must be positive");
  double best = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < sample_count; ++i) {
    const CotangentPoint p = quasi_random_unit_covector(m, static_cast<std::uint64_t>(i), seed);
    const PhaseMatrix jac = tangent_flow(m, p, T_max, opts.flow);
    const double norm = Eigen::JacobiSVD<PhaseMatrix>(jac).singularValues()(0);
    best = std::max(best, std::log(norm) / T_max);
  }
  return std::max(best, opts.floor);
}

double ehrenfest_time(double h, double Lambda) {
  if (!(h > 0.0 && h < 1.0)) throw DomainError("ehrenfest_time needs h in (0, 1)");
  if (!(Lambda > 0.0)) throw DomainError("ehrenfest_time needs Lambda > 0");
  return std::log(1.0 / h) / (2.0 * Lambda);
}

}  // namespace eigavg
