#include "eigavg/submanifold.hpp"

#include <algorithm>
#include <istream>
#include <limits>
#include <sstream>
#include <string>

#include "eigavg/flow.hpp"
#include "eigavg/proximity.hpp"

namespace eigavg {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr int kTableSize = 512;

// 8-point Gauss-Legendre on [-1, 1].
constexpr std::array<double, 8> kGLx = {-0.9602898564975363, -0.7966664774136267,
                                        -0.5255324099163290, -0.1834346424956498,
                                        0.1834346424956498,  0.5255324099163290,
                                        0.7966664774136267,  0.9602898564975363};
constexpr std::array<double, 8> kGLw = {0.1012285362903763, 0.2223810344533745,
                                        0.3137066859662230, 0.3626837833783620,
                                        0.3626837833783620, 0.3137066859662230,
                                        0.2223810344533745, 0.1012285362903763};

double positive_mod(double v, double period) {
  double r = std::fmod(v, period);
  if (r < 0) r += period;
  return r >= period ? 0.0 : r;
}

// Coordinate periods used to unwrap node lists.
Eigen::Vector2d coordinate_period(const ManifoldModel& m) {
  return m.is_torus() ? Eigen::Vector2d(1.0, 1.0) : Eigen::Vector2d(0.0, 2.0 * kPi);
}

double wrap_period(double v, double period) {
  return period > 0 ? v - period * std::floor(v / period + 0.5) : v;
}

BasePoint normalize_base(const ManifoldModel& m, const Eigen::Vector2d& x, int chart) {
  if (m.is_torus()) return {Eigen::Vector2d(wrap01(x(0)), wrap01(x(1))), 0};
  return {Eigen::Vector2d(x(0), wrap_period(x(1), 2.0 * kPi)), chart};
}

// Unit conormal built from a coordinate tangent: eta = (-v2, v1), normalized in g.
CotangentPoint conormal_from_velocity(const ManifoldModel& m, const BasePoint& x,
                                      const Eigen::Vector2d& v, int branch) {
  const Eigen::Vector2d eta(-v(1), v(0));
  CotangentPoint p{x.x, eta, x.chart};
  const double n = conorm(m, p);
  if (!(n > 1e-12)) throw DegenerateCurveError("curve tangent vanishes");
  p.xi *= static_cast<double>(branch) / n;
  return p;
}

int extended_gcd(int a, int b, int& x, int& y) {
  if (b == 0) {
    x = a >= 0 ? 1 : -1;
    y = 0;
    return std::abs(a);
  }
  int x1, y1;
  const int g = extended_gcd(b, a % b, x1, y1);
  x = y1;
  y = x1 - (a / b) * y1;
  return g;
}

}  // namespace

Submanifold Submanifold::point(const ManifoldModel& m, const BasePoint& x) {
  m.validate();
  Submanifold H;
  H.m_ = m;
  H.kind_ = SubmanifoldKind::Point;
  H.x0_ = x;
  metric_at(m, x);  // chart-domain check
  return H;
}

Submanifold Submanifold::closed_geodesic(const ManifoldModel& m, const CotangentPoint& p0,
                                         double length) {
  m.validate();
  if (!(length > 0)) throw DomainError("closed geodesic length must be positive");
  if (std::abs(conorm(m, p0) - 1.0) > 1e-8) throw DomainError("closed geodesic seed must be unit");
  Submanifold H;
  H.m_ = m;
  H.kind_ = SubmanifoldKind::ClosedGeodesic;
  H.p0_ = p0;
  H.length_ = length;
  if (m.is_flat()) {
    const Eigen::Vector2d d = length * p0.xi;
    const Eigen::Vector2i k(static_cast<int>(std::lround(d(0))), static_cast<int>(std::lround(d(1))));
    if ((d - k.cast<double>()).norm() < 1e-9 && k.cwiseAbs().maxCoeff() <= 64) {
      int a = 0, b = 0;
      if (extended_gcd(k(0), k(1), a, b) == 1) {
        H.flat_line_ = true;
        H.lattice_dir_ = k;
        H.bezout_ = Eigen::Vector2i(a, b);
      }
    }
  }
  H.finalize();
  return H;
}

Submanifold Submanifold::latitude_circle(double theta0) {
  if (!(theta0 > kChartSwitchMargin && theta0 < kPi - kChartSwitchMargin))
    throw DomainError("latitude must stay inside the chart margin");
  Submanifold H;
  H.m_ = ManifoldModel::sphere();
  H.kind_ = SubmanifoldKind::LatitudeCircle;
  H.theta0_ = theta0;
  H.length_ = 2.0 * kPi * std::sin(theta0);
  H.finalize();
  return H;
}

Submanifold Submanifold::param_curve(const ManifoldModel& m, std::vector<Eigen::Vector2d> nodes) {
  m.validate();
  const int n = static_cast<int>(nodes.size());
  if (n < 4) throw DegenerateCurveError("a periodic spline needs at least 4 nodes");
  const Eigen::Vector2d period = coordinate_period(m);
  Submanifold H;
  H.m_ = m;
  H.kind_ = SubmanifoldKind::ParamCurve;

  // Unwrap and split off the winding so the remainder is periodic.
  std::vector<Eigen::Vector2d> unwrapped(n + 1);
  unwrapped[0] = nodes[0];
  for (int j = 1; j <= n; ++j) {
    const Eigen::Vector2d& next = nodes[j % n];
    Eigen::Vector2d d = next - nodes[j - 1];
    for (int c = 0; c < 2; ++c) d(c) = wrap_period(d(c), period(c));
    unwrapped[j] = unwrapped[j - 1] + d;
  }
  Spline& sp = H.spline_;
  sp.winding = unwrapped[n] - unwrapped[0];
  sp.y.resize(n);
  for (int j = 0; j < n; ++j) sp.y[j] = unwrapped[j] - sp.winding * (static_cast<double>(j) / n);

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd rhs(n, 2);
  for (int j = 0; j < n; ++j) {
    A(j, (j + n - 1) % n) += 1.0;
    A(j, j) += 4.0;
    A(j, (j + 1) % n) += 1.0;
    rhs.row(j) = 6.0 * (sp.y[(j + 1) % n] - 2.0 * sp.y[j] + sp.y[(j + n - 1) % n]).transpose();
  }
  const Eigen::MatrixXd M = A.partialPivLu().solve(rhs);
  sp.m2.resize(n);
  for (int j = 0; j < n; ++j) sp.m2[j] = M.row(j).transpose();

  sp.cumulative.assign(n + 1, 0.0);
  for (int j = 0; j < n; ++j) {
    double seg = 0;
    for (int q = 0; q < 8; ++q) seg += 0.5 * kGLw[q] * H.spline_speed(j + 0.5 + 0.5 * kGLx[q]);
    sp.cumulative[j + 1] = sp.cumulative[j] + seg;
  }
  H.length_ = sp.cumulative[n];
  if (!(H.length_ > 1e-12)) throw DegenerateCurveError("curve has zero length");
  H.finalize();
  return H;
}

Submanifold Submanifold::read_curve_csv(const ManifoldModel& m, std::istream& in) {
  std::vector<Eigen::Vector2d> nodes;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    double a, b;
    if (!(ss >> a >> b)) {
      if (nodes.empty()) continue;  // header
      throw ConfigError("malformed curve row: " + line);
    }
    nodes.emplace_back(a, b);
  }
  return param_curve(m, std::move(nodes));
}

double Submanifold::param_period() const {
  return kind_ == SubmanifoldKind::Point ? 2.0 * kPi : length_;
}

void Submanifold::spline_eval(double u, Eigen::Vector2d& c, Eigen::Vector2d& d1,
                              Eigen::Vector2d& d2) const {
  const Spline& sp = spline_;
  const int n = static_cast<int>(sp.y.size());
  const double uu = positive_mod(u, n);
  int j = std::min(static_cast<int>(std::floor(uu)), n - 1);
  const double t = uu - j, s = 1.0 - t;
  const int k = (j + 1) % n;
  const Eigen::Vector2d &y0 = sp.y[j], &y1 = sp.y[k], &m0 = sp.m2[j], &m1 = sp.m2[k];
  c = s * y0 + t * y1 + ((s * s * s - s) * m0 + (t * t * t - t) * m1) / 6.0;
  d1 = y1 - y0 + ((1.0 - 3.0 * s * s) * m0 + (3.0 * t * t - 1.0) * m1) / 6.0;
  d2 = s * m0 + t * m1;
  c += sp.winding * (u / n);
  d1 += sp.winding / n;
}

double Submanifold::spline_speed(double u) const {
  Eigen::Vector2d c, d1, d2;
  spline_eval(u, c, d1, d2);
  const MetricData md = metric_at(m_, normalize_base(m_, c, 0));
  return std::sqrt(d1.dot(md.g * d1));
}

double Submanifold::spline_param_of_arclength(double s) const {
  const Spline& sp = spline_;
  const int n = static_cast<int>(sp.y.size());
  s = positive_mod(s, length_);
  int j = static_cast<int>(std::upper_bound(sp.cumulative.begin(), sp.cumulative.end(), s) -
                           sp.cumulative.begin()) - 1;
  j = std::clamp(j, 0, n - 1);
  const double seg = sp.cumulative[j + 1] - sp.cumulative[j];
  double u = j + (seg > 0 ? (s - sp.cumulative[j]) / seg : 0.0);
  for (int it = 0; it < 30; ++it) {
    const double a = j, b = u;
    double integral = 0;
    for (int q = 0; q < 8; ++q)
      integral += 0.5 * (b - a) * kGLw[q] * spline_speed(0.5 * (a + b) + 0.5 * (b - a) * kGLx[q]);
    const double f = sp.cumulative[j] + integral - s;
    const double speed = spline_speed(u);
    if (!(speed > 1e-12)) throw DegenerateCurveError("curve tangent vanishes");
    const double du = f / speed;
    u = std::clamp(u - du, static_cast<double>(j), static_cast<double>(j + 1));
    if (std::abs(du) < 1e-15) break;
  }
  return u;
}

QuadNode Submanifold::node_at(double s) const {
  QuadNode q;
  q.param = s;
  switch (kind_) {
    case SubmanifoldKind::Point:
      q.x = x0_;
      q.weight = 1.0;
      return q;
    case SubmanifoldKind::ClosedGeodesic: {
      const CotangentPoint p = flow_point(m_, p0_, positive_mod(s, length_));
      q.x = p.base();
      q.velocity = metric_at(m_, q.x).g_inv * p.xi;
      return q;
    }
    case SubmanifoldKind::LatitudeCircle: {
      const double st = std::sin(theta0_);
      q.x = {Eigen::Vector2d(theta0_, wrap_period(positive_mod(s, length_) / st, 2.0 * kPi)), 0};
      q.velocity = Eigen::Vector2d(0.0, 1.0 / st);
      return q;
    }
    case SubmanifoldKind::ParamCurve: {
      const double u = spline_param_of_arclength(s);
      Eigen::Vector2d c, d1, d2;
      spline_eval(u, c, d1, d2);
      q.x = normalize_base(m_, c, 0);
      const double speed = std::sqrt(d1.dot(metric_at(m_, q.x).g * d1));
      if (!(speed > 1e-12)) throw DegenerateCurveError("curve tangent vanishes");
      q.velocity = d1 / speed;
      return q;
    }
  }
  return q;
}

std::vector<QuadNode> Submanifold::quadrature(int count) const {
  if (kind_ == SubmanifoldKind::Point) return {node_at(0.0)};
  if (count < 1) throw DomainError("quadrature needs at least one node");
  std::vector<QuadNode> out;
  out.reserve(count);
  const double w = length_ / count;
  if (kind_ == SubmanifoldKind::ClosedGeodesic && !m_.has_closed_form_flow()) {
    // March along the geodesic instead of re-integrating from the seed.
    CotangentPoint p = p0_;
    for (int i = 0; i < count; ++i) {
      QuadNode q;
      q.param = i * w;
      q.x = p.base();
      q.velocity = metric_at(m_, q.x).g_inv * p.xi;
      q.weight = w;
      out.push_back(q);
      p = flow_point(m_, p, w);
    }
    return out;
  }
  for (int i = 0; i < count; ++i) {
    QuadNode q = node_at(i * w);
    q.weight = w;
    out.push_back(q);
  }
  return out;
}

double Submanifold::geodesic_curvature(double s) const {
  switch (kind_) {
    case SubmanifoldKind::Point:
    case SubmanifoldKind::ClosedGeodesic:
      return 0.0;
    case SubmanifoldKind::LatitudeCircle:
      return std::abs(std::cos(theta0_) / std::sin(theta0_));
    case SubmanifoldKind::ParamCurve: {
      const double u = spline_param_of_arclength(s);
      Eigen::Vector2d c, d1, d2;
      spline_eval(u, c, d1, d2);
      const BasePoint x = normalize_base(m_, c, 0);
      const MetricData md = metric_at(m_, x);
      Eigen::Vector2d acc = d2;
      for (int i = 0; i < 2; ++i) acc(i) += d1.dot(md.christoffel[i] * d1);
      const double speed2 = d1.dot(md.g * d1);
      // Normal vector: g^{-1} eta with eta annihilating d1.
      Eigen::Vector2d nvec = md.g_inv * Eigen::Vector2d(-d1(1), d1(0));
      nvec /= std::sqrt(nvec.dot(md.g * nvec));
      return std::abs(acc.dot(md.g * nvec)) / speed2;
    }
  }
  return 0.0;
}

CotangentPoint Submanifold::conormal_at(double param, int branch) const {
  if (kind_ == SubmanifoldKind::Point) return unit_covector(m_, x0_, param);
  if (branch != 1 && branch != -1) throw DomainError("curve conormal branch must be +1 or -1");
  if (kind_ == SubmanifoldKind::ClosedGeodesic && m_.kind == ManifoldKind::Sphere2) {
    // Rotate the seed in the ambient lift to stay chart-agnostic near poles.
    const CotangentPoint p = flow_point(m_, p0_, positive_mod(param, length_));
    const Eigen::Vector2d v = metric_at(m_, p.base()).g_inv * p.xi;
    return conormal_from_velocity(m_, p.base(), v, branch);
  }
  const QuadNode q = node_at(param);
  return conormal_from_velocity(m_, q.x, q.velocity, branch);
}

void Submanifold::finalize() {
  if (kind_ == SubmanifoldKind::Point) return;
  double kmax = 0;
  const int dense = 8 * std::max<int>(64, static_cast<int>(spline_.y.size()));
  if (kind_ == SubmanifoldKind::ParamCurve) {
    for (int i = 0; i < dense; ++i) kmax = std::max(kmax, geodesic_curvature(i * length_ / dense));
  } else {
    kmax = geodesic_curvature(0.0);
  }
  curvature_bound_ = 1.5 * kmax;

  const bool fast = flat_line_ || kind_ == SubmanifoldKind::LatitudeCircle ||
                    (kind_ == SubmanifoldKind::ClosedGeodesic && m_.kind == ManifoldKind::Sphere2);
  if (fast) return;
  const std::vector<QuadNode> nodes = quadrature(kTableSize);
  table_s_.reserve(kTableSize);
  for (const QuadNode& q : nodes) {
    table_s_.push_back(q.param);
    table_plus_.push_back(phase_embed(m_, conormal_from_velocity(m_, q.x, q.velocity, 1)));
    table_minus_.push_back(phase_embed(m_, conormal_from_velocity(m_, q.x, q.velocity, -1)));
  }
}

ConormalDistance Submanifold::point_distance(const CotangentPoint& p) const {
  ConormalDistance out;
  if (m_.kind == ManifoldKind::Sphere2) {
    Eigen::Vector3d X, P;
    sphere_lift(p, X, P);
    const Eigen::Vector3d X0 = sphere_embed(x0_);
    Eigen::Vector3d Pt = P - P.dot(X0) * X0;
    const double n = Pt.norm();
    if (n < 1e-14) {
      out.distance = std::sqrt((X - X0).squaredNorm() + 1.0 + P.squaredNorm());
      return out;
    }
    Pt /= n;
    out.distance = std::sqrt((X - X0).squaredNorm() + (P - Pt).squaredNorm());
    out.param = covector_angle(m_, sphere_from_lift(X0, Pt, x0_.chart));
    return out;
  }
  CotangentPoint q{x0_.x, p.xi, 0};
  const double n = conorm(m_, q);
  if (n < 1e-14) {
    out.distance = std::sqrt(phase_distance(m_, p, q) + 1.0);
    return out;
  }
  q.xi /= n;
  out.distance = phase_distance(m_, p, q);
  out.param = covector_angle(m_, q);
  return out;
}

ConormalDistance Submanifold::flat_line_distance(const CotangentPoint& p) const {
  const Eigen::Vector2d k = lattice_dir_.cast<double>();
  const double L = k.norm();
  const Eigen::Vector2d v = k / L, nrm(-v(1), v(0));
  Eigen::Vector2d d(wrap_half(p.x(0) - p0_.x(0)), wrap_half(p.x(1) - p0_.x(1)));
  const double c = d.dot(nrm);
  const double m = std::round(c * L);
  // Lattice vector j with j . nrm = m / L via the Bezout identity a p + b q = 1.
  const Eigen::Vector2d j(-m * bezout_(1), m * bezout_(0));
  const Eigen::Vector2d y = d - (c - m / L) * nrm - j;
  const double s = positive_mod(y.dot(v), L);
  ConormalDistance best{std::numeric_limits<double>::infinity(), s, 1};
  for (int b : {1, -1}) {
    const double dist = phase_distance(m_, p, conormal_at(s, b));
    if (dist < best.distance) best = {dist, s, b};
  }
  return best;
}

ConormalDistance Submanifold::great_circle_distance(const CotangentPoint& p) const {
  Eigen::Vector3d X0, T0, X, P;
  sphere_lift(p0_, X0, T0);
  sphere_lift(p, X, P);
  const double s = positive_mod(std::atan2(X.dot(T0), X.dot(X0)), length_);
  ConormalDistance best{std::numeric_limits<double>::infinity(), s, 1};
  for (int b : {1, -1}) {
    const double dist = phase_distance(m_, p, conormal_at(s, b));
    if (dist < best.distance) best = {dist, s, b};
  }
  return best;
}

ConormalDistance Submanifold::latitude_distance(const CotangentPoint& p) const {
  Eigen::Vector3d X, P;
  sphere_lift(p, X, P);
  const double phi = std::atan2(X(1), X(0));
  const double s = positive_mod(phi * std::sin(theta0_), length_);
  ConormalDistance best{std::numeric_limits<double>::infinity(), s, 1};
  for (int b : {1, -1}) {
    const double dist = phase_distance(m_, p, conormal_at(s, b));
    if (dist < best.distance) best = {dist, s, b};
  }
  return best;
}

ConormalDistance Submanifold::refine(const CotangentPoint& p, const ConormalDistance& seed,
                                     double halfwidth) const {
  const double period = param_period();
  auto f = [&](double s) { return phase_distance(m_, p, conormal_at(s, seed.branch)); };
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = seed.param - halfwidth, b = seed.param + halfwidth;
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < 60 && b - a > 1e-11 * std::max(1.0, period); ++it) {
    if (fc < fd) {
      b = d, d = c, fd = fc;
      c = b - g * (b - a);
      fc = f(c);
    } else {
      a = c, c = d, fc = fd;
      d = a + g * (b - a);
      fd = f(d);
    }
  }
  const double s = 0.5 * (a + b);
  const ConormalDistance out{f(s), positive_mod(s, period), seed.branch};
  return out.distance < seed.distance ? out : seed;
}

ConormalDistance Submanifold::generic_distance(const CotangentPoint& p) const {
  const PhaseVector v = phase_embed(m_, p);
  int best_i = 0, best_b = 1;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < table_s_.size(); ++i) {
    const double dp = (table_plus_[i] - v).squaredNorm();
    const double dm = (table_minus_[i] - v).squaredNorm();
    if (dp < best_d) best_d = dp, best_i = static_cast<int>(i), best_b = 1;
    if (dm < best_d) best_d = dm, best_i = static_cast<int>(i), best_b = -1;
  }
  const double ds = length_ / static_cast<double>(table_s_.size());
  const double s0 = table_s_[best_i];
  return refine(p, {phase_distance(m_, p, conormal_at(s0, best_b)), s0, best_b}, ds);
}

ConormalDistance Submanifold::conormal_distance(const CotangentPoint& p) const {
  switch (kind_) {
    case SubmanifoldKind::Point: {
      const ConormalDistance seed = point_distance(p);
      return m_.is_flat() || m_.kind == ManifoldKind::Sphere2 ? seed : refine(p, seed, 0.3);
    }
    case SubmanifoldKind::ClosedGeodesic:
    case SubmanifoldKind::LatitudeCircle: {
      if (!flat_line_ && kind_ == SubmanifoldKind::ClosedGeodesic &&
          m_.kind != ManifoldKind::Sphere2)
        return generic_distance(p);
      // Closed-form nearest base point, then a local search on each branch.
      ConormalDistance seed = kind_ == SubmanifoldKind::LatitudeCircle ? latitude_distance(p)
                              : flat_line_                            ? flat_line_distance(p)
                                                                      : great_circle_distance(p);
      const double w = std::min(0.3, 0.25 * length_);
      ConormalDistance best = refine(p, seed, w);
      seed.branch = -seed.branch;
      seed.distance = phase_distance(m_, p, conormal_at(seed.param, seed.branch));
      const ConormalDistance other = refine(p, seed, w);
      return other.distance < best.distance ? other : best;
    }
    case SubmanifoldKind::ParamCurve:
      return generic_distance(p);
  }
  return {};
}

std::vector<ConormalSample> sample_conormal(const Submanifold& H, double density) {
  if (!(density >= 4.0)) throw DomainError("conormal density must be at least 4");
  std::vector<ConormalSample> out;
  if (H.kind() == SubmanifoldKind::Point) {
    const int count = static_cast<int>(std::ceil(density * 2.0 * kPi));
    const double w = 2.0 * kPi / count;
    const BasePoint x = H.quadrature(1).front().x;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
      const double a = i * w;
      out.push_back({unit_covector(H.manifold(), x, a), w, 0, 0, a});
    }
    return out;
  }
  const int count = static_cast<int>(std::ceil(density * H.volume()));
  const std::vector<QuadNode> nodes = H.quadrature(count);
  out.reserve(2 * nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (int b : {1, -1}) {
      out.push_back({conormal_from_velocity(H.manifold(), nodes[i].x, nodes[i].velocity, b),
                     nodes[i].weight, static_cast<int>(i), b, nodes[i].param});
    }
  }
  return out;
}

double conormal_measure(const std::vector<ConormalSample>& samples,
                        const std::function<bool(const ConormalSample&)>& A) {
  double total = 0;
  for (const ConormalSample& s : samples)
    if (A(s)) total += s.weight;
  return total;
}

double injectivity_time(const Submanifold& H, const std::vector<ConormalSample>& samples,
                        const InjectivityGrid& grid, double T_probe) {
  if (samples.empty()) throw DomainError("no conormal samples");
  if (!(grid.time_step > 0) || !(grid.collision_tol > 0) || !(T_probe > 0) || grid.levels < 1)
    throw DomainError("invalid injectivity grid");
  const ManifoldModel& m = H.manifold();

  {
    ProximityIndex index(1e-9);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const PhaseVector v = phase_embed(m, samples[i].rho);
      if (index.nearest_within(v, 1e-12))
        throw DegenerateSampleError("duplicated conormal samples");
      index.insert(v, static_cast<int>(i));
    }
  }

  const int J = static_cast<int>(std::floor(T_probe / grid.time_step));
  double param_spacing = 0;
  {
    std::vector<double> ps;
    for (const ConormalSample& s : samples) ps.push_back(s.param);
    std::sort(ps.begin(), ps.end());
    ps.erase(std::unique(ps.begin(), ps.end()), ps.end());
    for (std::size_t i = 1; i < ps.size(); ++i) param_spacing = std::max(param_spacing, ps[i] - ps[i - 1]);
    if (ps.size() == 1) param_spacing = H.param_period();
  }
  const double sep = 4.0 * grid.collision_tol + 2.0 * std::max(grid.time_step, param_spacing);
  const double period = H.param_period();

  struct Flowed {
    int sample;
    int step;
  };
  std::vector<Flowed> meta;
  ProximityIndex index(grid.collision_tol);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    index.insert(phase_embed(m, samples[i].rho), static_cast<int>(meta.size()));
    meta.push_back({static_cast<int>(i), 0});
    for (int dir : {1, -1}) {
      CotangentPoint p = samples[i].rho;
      for (int j = 1; j <= J; ++j) {
        p = flow_point(m, p, dir * grid.time_step);
        index.insert(phase_embed(m, p), static_cast<int>(meta.size()));
        meta.push_back({static_cast<int>(i), dir * j});
      }
    }
  }

  double tau_star = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < index.size(); ++a) {
    const Flowed& fa = meta[index.label(a)];
    index.for_each_within(index.point(a), grid.collision_tol, [&](int b, double) {
      const Flowed& fb = meta[index.label(b)];
      if (static_cast<std::size_t>(b) <= a) return;
      const ConormalSample &sa = samples[fa.sample], &sb = samples[fb.sample];
      const double dt = std::abs(fa.step - fb.step) * grid.time_step;
      double dp = std::abs(sa.param - sb.param);
      dp = std::min(dp, period - dp);
      const bool near = sa.branch == sb.branch && dt <= sep && dp <= sep;
      if (near) return;
      const double need = std::max(std::abs(fa.step), std::abs(fb.step)) * grid.time_step;
      tau_star = std::min(tau_star, need);
    });
  }
  if (tau_star >= T_probe) return T_probe;
  const double cell = T_probe / static_cast<double>(1 << grid.levels);
  return std::floor(tau_star / cell) * cell;
}

}  // namespace eigavg
