#include "eigavg/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <tuple>

#include "eigavg/parallel.hpp"
#include "eigavg/proximity.hpp"

namespace eigavg {

namespace {

constexpr double kPi = std::numbers::pi;

/// Upper bound on the coordinate (torus) or ambient (sphere) speed of a unit-speed geodesic.
double base_speed(const ManifoldModel& m) {
  return m.kind == ManifoldKind::ConformalTorus2 ? std::exp(m.amplitude) : 1.0;
}

double base_distance(const ManifoldModel& m, const CotangentPoint& a, const BasePoint& b) {
  if (m.is_torus()) {
    const double dx = wrap_half(a.x(0) - b.x(0)), dy = wrap_half(a.x(1) - b.x(1));
    return std::hypot(dx, dy);
  }
  return (sphere_embed(a.base()) - sphere_embed(b)).norm();
}

/// Lift of a base point; distances in it never exceed geodesic (torus: coordinate) distances.
PhaseVector base_lift(const ManifoldModel& m, const BasePoint& x) {
  return phase_embed(m, {x.x, Eigen::Vector2d::Zero(), x.chart});
}

/// Foot point on a curve H: (parameter, signed offset, conormal covector at the foot).
struct Foot {
  double s = 0.0;
  double offset = 0.0;
  CotangentPoint normal;  // conormal_at(s, +1)
};

/// Closed geodesic of a flat torus in direction k / |k|, k primitive.
struct FlatLine {
  Eigen::Vector2d x0, d, n;
  double L = 0.0;
  Eigen::Vector2d v;  // integer vector with <v, |k| n> = 1
};

std::optional<FlatLine> flat_line(const Submanifold& H) {
  if (!H.manifold().is_flat() || H.kind() != SubmanifoldKind::ClosedGeodesic) return std::nullopt;
  const QuadNode q = H.node_at(0.0);
  FlatLine f;
  f.x0 = q.x.x;
  f.L = H.volume();
  f.d = q.velocity.normalized();
  f.n = Eigen::Vector2d(-f.d(1), f.d(0));
  const long p = std::lround(f.d(0) * f.L), r = std::lround(f.d(1) * f.L);
  // Extended Euclid on (-r, p): a (-r) + b p = 1.
  long old_r = -r, cur_r = p, old_a = 1, a = 0, old_b = 0, b = 1;
  while (cur_r != 0) {
    const long qt = old_r / cur_r;
    std::tie(old_r, cur_r) = std::make_pair(cur_r, old_r - qt * cur_r);
    std::tie(old_a, a) = std::make_pair(a, old_a - qt * a);
    std::tie(old_b, b) = std::make_pair(b, old_b - qt * b);
  }
  if (old_r < 0) old_a = -old_a, old_b = -old_b;
  f.v = Eigen::Vector2d(double(old_a), double(old_b));
  return f;
}

Foot curve_foot(const Submanifold& H, const CotangentPoint& p, double s_seed,
                const std::optional<FlatLine>& line = std::nullopt) {
  const ManifoldModel& m = H.manifold();
  Foot f;
  if (line) {
    const Eigen::Vector2d rel = p.x - line->x0;
    const double b = rel.dot(line->n);
    const double j = std::round(b * line->L);
    f.offset = b - j / line->L;
    const Eigen::Vector2d y = rel - f.offset * line->n - j * line->v;
    f.s = y.dot(line->d);
    f.s -= line->L * std::floor(f.s / line->L);
    f.normal = H.conormal_at(f.s, 1);
    return f;
  }
  f.s = s_seed;
  for (int it = 0; it < 4; ++it) {
    const CotangentPoint c = H.conormal_at(f.s, 1);
    CotangentPoint probe;
    if (m.is_torus()) {
      probe = p;
      probe.xi = c.xi * std::exp(m.kind == ManifoldKind::ConformalTorus2
                                     ? conformal_phi(m, p.x(0)) - conformal_phi(m, c.x(0))
                                     : 0.0);
    } else {
      Eigen::Vector3d X, P, C, N;
      sphere_lift(p, X, P);
      sphere_lift(c, C, N);
      Eigen::Vector3d T = N - N.dot(X) * X;
      if (T.norm() < 1e-12) break;
      probe = sphere_from_lift(X, T.normalized(), p.chart);
    }
    const double s_new = H.conormal_distance(probe).param;
    const double period = H.param_period();
    const double moved = std::abs(s_new - f.s - period * std::round((s_new - f.s) / period));
    f.s = s_new;
    if (moved < 1e-13) break;
  }
  f.normal = H.conormal_at(f.s, 1);
  if (m.is_torus()) {
    const Eigen::Vector2d dx(wrap_half(p.x(0) - f.normal.x(0)), wrap_half(p.x(1) - f.normal.x(1)));
    f.offset = dx.dot(f.normal.xi) / f.normal.xi.norm();
  } else {
    Eigen::Vector3d X, P, C, N;
    sphere_lift(p, X, P);
    sphere_lift(f.normal, C, N);
    f.offset = X.dot(N);
  }
  return f;
}

int side(const ManifoldModel& m, const CotangentPoint& p, const CotangentPoint& normal) {
  if (m.is_torus()) return p.xi.dot(normal.xi) >= 0.0 ? 1 : -1;
  Eigen::Vector3d X, P, C, N;
  sphere_lift(p, X, P);
  sphere_lift(normal, C, N);
  return P.dot(N) >= 0.0 ? 1 : -1;
}

template <typename F>
double golden_argmin(F&& f, double a, double b, double tol) {
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
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
  return 0.5 * (a + b);
}

}  // namespace

InvariantMeasure InvariantMeasure::liouville(const ManifoldModel& m, int count,
                                             std::uint64_t seed) {
  if (count < 1) throw DomainError("liouville: count must be positive");
  InvariantMeasure mu;
  mu.kind = MeasureKind::Liouville;
  mu.manifold = m;
  mu.samples.resize(count);
  double total = 0.0;
  for (int i = 0; i < count; ++i) {
    const Eigen::Vector3d u = quasi_random3(i, seed);
    BasePoint x;
    double w = 1.0;
    if (m.is_torus()) {
      x.x = u.head<2>();
      if (m.kind == ManifoldKind::ConformalTorus2) w = std::exp(2.0 * conformal_phi(m, x.x(0)));
    } else {
      const double z = 2.0 * u(0) - 1.0, ph = 2.0 * kPi * u(1);
      const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      const Eigen::Vector3d X(r * std::cos(ph), r * std::sin(ph), z);
      x = sphere_chart_point(X, sphere_pick_chart(X, 0));
    }
    mu.samples[i] = {unit_covector(m, x, 2.0 * kPi * u(2)), w};
    total += w;
  }
  for (auto& s : mu.samples) s.weight /= total;
  return mu;
}

InvariantMeasure InvariantMeasure::periodic_orbit(const ManifoldModel& m, const CotangentPoint& seed,
                                                  double period, int count) {
  if (!(period > 0.0) || count < 1) throw DomainError("periodic_orbit: need period > 0, count > 0");
  InvariantMeasure mu;
  mu.kind = MeasureKind::PeriodicOrbit;
  mu.manifold = m;
  mu.period = period;
  const double dt = period / count;
  CotangentPoint p = flow_point(m, seed, 0.5 * dt);
  for (int i = 0; i < count; ++i) {
    const CotangentPoint q =
        m.has_closed_form_flow() ? flow_point(m, seed, (i + 0.5) * dt) : p;
    mu.samples.push_back({q, 1.0 / count});
    if (!m.has_closed_form_flow()) p = flow_point(m, p, dt);
  }
  return mu;
}

InvariantMeasure InvariantMeasure::product_delta_xi(const ManifoldModel& m,
                                                    const Eigen::Vector2d& xi0, int count) {
  if (!m.is_flat()) throw DomainError("product_delta_xi: flat torus only");
  if (std::abs(xi0.norm() - 1.0) > 1e-12) throw DomainError("product_delta_xi: xi0 must be unit");
  InvariantMeasure mu;
  mu.kind = MeasureKind::ProductDeltaXi;
  mu.manifold = m;
  const double w = 1.0 / (double(count) * count);
  for (int i = 0; i < count; ++i)
    for (int j = 0; j < count; ++j) {
      CotangentPoint p;
      p.x = Eigen::Vector2d((i + 0.5) / count, (j + 0.5) / count);
      p.xi = xi0;
      mu.samples.push_back({p, w});
    }
  return mu;
}

double InvariantMeasure::total() const {
  double t = 0.0;
  for (const auto& s : samples) t += s.weight;
  return t;
}

double flow_invariance_defect(const InvariantMeasure& mu, int bins, double t) {
  const ManifoldModel& m = mu.manifold;
  auto bin_of = [&](const CotangentPoint& p) {
    double a, b, c;
    if (m.is_torus()) {
      a = wrap01(p.x(0));
      b = wrap01(p.x(1));
      c = std::atan2(p.xi(1), p.xi(0));
    } else {
      Eigen::Vector3d X, P;
      sphere_lift(p, X, P);
      a = 0.5 * (X(2) + 1.0);
      b = std::atan2(X(1), X(0)) / (2 * kPi) + 0.5;
      const Eigen::Vector3d et(X(0) * X(2), X(1) * X(2), -(X(0) * X(0) + X(1) * X(1)));
      const Eigen::Vector3d ep(-X(1), X(0), 0.0);
      c = std::atan2(P.dot(ep.normalized()), P.dot(et.normalized()));
    }
    auto idx = [&](double v) { return std::clamp(static_cast<int>(v * bins), 0, bins - 1); };
    return (idx(a) * bins + idx(b)) * bins + idx(c / (2 * kPi) + 0.5);
  };
  std::vector<double> before(bins * bins * bins, 0.0), after(before.size(), 0.0);
  std::vector<int> moved(mu.samples.size());
  parallel_for(static_cast<int>(mu.samples.size()), [&](int i) {
    moved[i] = bin_of(flow_point(m, mu.samples[i].p, t));
  });
  for (std::size_t i = 0; i < mu.samples.size(); ++i) {
    before[bin_of(mu.samples[i].p)] += mu.samples[i].weight;
    after[moved[i]] += mu.samples[i].weight;
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < before.size(); ++k)
    worst = std::max(worst, std::abs(before[k] - after[k]));
  return worst;
}

namespace {

std::optional<HCrossing> crossing_impl(const Submanifold& H, const CotangentPoint& p, double delta,
                                       const std::optional<FlatLine>& line) {
  const ManifoldModel& m = H.manifold();
  const double reach = 1.01 * base_speed(m) * delta * conorm(m, p) + 1e-12;
  auto at = [&](double t) { return t == 0.0 ? p : flow_point(m, p, t); };

  if (H.kind() == SubmanifoldKind::Point) {
    const BasePoint x0 = H.quadrature(1).front().x;
    if (base_distance(m, p, x0) > reach) return std::nullopt;
    const double ts = golden_argmin([&](double t) { return base_distance(m, at(t), x0); }, -delta,
                                    delta, 1e-12 * std::max(1.0, delta));
    const CotangentPoint q = at(ts);
    if (base_distance(m, q, x0) > 1e-7) return std::nullopt;
    const double angle = covector_angle(m, q);
    return HCrossing{ts, {H.conormal_at(angle, 0), 0.0, 0, 0, angle}};
  }

  Foot f0 = curve_foot(H, p, line ? 0.0 : H.conormal_distance(p).param, line);
  if (std::abs(f0.offset) > reach) return std::nullopt;
  constexpr int kSlices = 4;
  std::vector<double> ts(kSlices + 1), off(kSlices + 1);
  std::vector<double> seeds(kSlices + 1);
  for (int j = 0; j <= kSlices; ++j) {
    ts[j] = -delta + 2.0 * delta * j / kSlices;
    const Foot f = curve_foot(H, at(ts[j]), f0.s, line);
    off[j] = f.offset;
    seeds[j] = f.s;
  }
  std::optional<HCrossing> best;
  for (int j = 0; j < kSlices; ++j) {
    if ((off[j] > 0) == (off[j + 1] > 0) && off[j] != 0.0) continue;
    double a = ts[j], b = ts[j + 1], fa = off[j];
    double s = seeds[j];
    for (int it = 0; it < 60 && b - a > 1e-14; ++it) {
      const double c = 0.5 * (a + b);
      const Foot f = curve_foot(H, at(c), s, line);
      s = f.s;
      if ((f.offset > 0) == (fa > 0)) {
        a = c;
        fa = f.offset;
      } else {
        b = c;
      }
    }
    const double tc = 0.5 * (a + b);
    if (best && std::abs(best->t) <= std::abs(tc)) continue;
    const CotangentPoint q = at(tc);
    const Foot f = curve_foot(H, q, s, line);
    const int branch = side(m, q, f.normal);
    best = HCrossing{tc, {H.conormal_at(f.s, branch), 0.0, 0, branch, f.s}};
  }
  return best;
}

}  // namespace

std::optional<HCrossing> h_crossing(const Submanifold& H, const CotangentPoint& p, double delta) {
  return crossing_impl(H, p, delta, flat_line(H));
}

ThickenResult thicken_measure(const InvariantMeasure& mu, const Submanifold& H,
                              const std::function<bool(const ConormalSample&)>& A,
                              const std::vector<double>& deltas) {
  if (deltas.size() < 3) throw DomainError("thicken_measure: need at least three deltas");
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    if (!(deltas[i] > 0.0)) throw DomainError("thicken_measure: deltas must be positive");
    if (i > 0 && !(deltas[i] < deltas[i - 1]))
      throw DomainError("thicken_measure: deltas must decrease");
  }
  const double dmax = deltas.front();
  const ManifoldModel& m = H.manifold();

  // Base nodes of H for a cheap rejection of samples that cannot reach H within dmax.
  std::optional<ProximityIndex> near;
  double radius = 0.0;
  if (H.kind() != SubmanifoldKind::Point) {
    const double spacing = 0.25 * dmax;
    const int count = std::max(16, static_cast<int>(std::ceil(H.volume() / spacing)));
    radius = 1.01 * base_speed(m) * dmax + H.volume() / count;
    near.emplace(radius);
    for (const QuadNode& q : H.quadrature(count)) near->insert(base_lift(m, q.x), 0);
  }

  const std::optional<FlatLine> line = flat_line(H);
  std::vector<std::optional<HCrossing>> hits(mu.samples.size());
  parallel_for(static_cast<int>(mu.samples.size()), [&](int i) {
    const CotangentPoint& p = mu.samples[i].p;
    if (near && !near->nearest_within(base_lift(m, p.base()), radius))
      return;
    auto c = crossing_impl(H, p, dmax, line);
    if (c && A(c->at)) hits[i] = c;
  });

  ThickenResult res;
  res.deltas = deltas;
  for (double d : deltas) {
    double mass = 0.0;
    for (std::size_t i = 0; i < hits.size(); ++i)
      if (hits[i] && std::abs(hits[i]->t) <= d) mass += mu.samples[i].weight;
    res.estimates.push_back(mass / (2.0 * d));
  }
  const std::size_t n = deltas.size();
  const double da = deltas[n - 2], db = deltas[n - 1];
  const double Ea = res.estimates[n - 2], Eb = res.estimates[n - 1];
  const double scale = std::max(std::abs(Ea), std::abs(Eb));
  if (scale > 0.0 && std::abs(Ea - Eb) > 0.1 * scale)
    throw NoConvergenceError("thicken_measure: estimates at the two smallest deltas differ by more "
                             "than 10%");
  res.limit = (da * Eb - db * Ea) / (da - db);
  // Sampling error of the extrapolated value, samples treated as independent draws.
  const double ga = -db / (2.0 * da * (da - db)), gb = da / (2.0 * db * (da - db));
  double total = 0.0;
  for (const auto& s : mu.samples) total += s.weight;
  const double mean = total > 0.0 ? res.limit / total : 0.0;
  double var = 0.0;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    double g = 0.0;
    if (hits[i] && std::abs(hits[i]->t) <= da) g += ga;
    if (hits[i] && std::abs(hits[i]->t) <= db) g += gb;
    const double w = mu.samples[i].weight;
    var += w * w * (g - mean) * (g - mean);
  }
  res.std_error = std::sqrt(var);
  return res;
}

double micro1_rhs(const std::vector<ConormalSample>& samples, const std::vector<double>& f,
                  const std::function<bool(const ConormalSample&)>& A) {
  if (f.size() != samples.size()) throw DomainError("micro1_rhs: one density value per sample");
  double sum = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!(f[i] >= 0.0)) throw DomainError("micro1_rhs: density must be non-negative");
    if (A(samples[i])) sum += samples[i].weight * std::sqrt(f[i]);
  }
  return sum;
}

BoundReport prelim_bracket(double sigma_B, const std::vector<SigmaGroup>& groups) {
  if (!(sigma_B >= 0.0)) throw DomainError("prelim_bracket: sigma(B) must be non-negative");
  BoundReport r;
  r.term_B = std::sqrt(sigma_B);
  r.pieces.push_back(r.term_B);
  for (const auto& g : groups) {
    if (!(g.sigma >= 0.0) || !(g.t >= 0.0)) throw DomainError("prelim_bracket: negative input");
    if (!(g.t < g.T)) throw DomainError("prelim_bracket: need t < T");
    const double piece = std::sqrt(g.sigma * g.t / g.T);
    r.pieces.push_back(piece);
    r.term_groups += piece;
  }
  r.bracket = r.term_B + r.term_groups;
  r.constant_slots = "C (unknown, not instantiated)";
  return r;
}

BoundReport tube_bracket(long nB, const std::vector<CountGroup>& groups, double R, double tau,
                         int n, int k, double h) {
  if (nB < 0) throw DomainError("tube_bracket: negative count");
  if (!(R > 0.0) || !(tau > 0.0)) throw DomainError("tube_bracket: need R, tau > 0");
  BoundReport r;
  r.h = h;
  r.R = R;
  r.tau = tau;
  r.n = n;
  r.k = k;
  r.prefactor = std::pow(R, 0.5 * (n - 1)) / std::sqrt(tau);
  r.term_B = r.prefactor * std::sqrt(double(nB));
  r.pieces.push_back(r.term_B);
  for (const auto& g : groups) {
    if (g.count < 0 || !(g.t >= 0.0)) throw DomainError("tube_bracket: negative input");
    if (!(g.t < g.T)) throw DomainError("tube_bracket: need t < T");
    const double piece = r.prefactor * std::sqrt(double(g.count) * g.t / g.T);
    r.pieces.push_back(piece);
    r.term_groups += piece;
  }
  r.bracket = r.term_B + r.term_groups;
  r.constant_slots = "C_{n,k} x ||w||_inf (unknown, not instantiated)";
  return r;
}

double single_tube_bound(double R, double h, int n, int k) {
  if (!(R > 0.0 && R < 1.0) || !(h > 0.0 && h < 1.0))
    throw DomainError("single_tube_bound: R and h must lie in (0,1)");
  return std::pow(R, 0.5 * (n - 1)) * std::pow(h, 0.5 * (1 - k));
}

void write_bound_csv_header(std::ostream& out) {
  out << "h,R,tau,n,k,bracket,term_B,term_groups,constant_slots\n";
}

void write_bound_csv_row(std::ostream& out, const BoundReport& r) {
  std::string slots = r.constant_slots;
  std::string quoted = "\"";
  for (char c : slots) quoted += c == '"' ? std::string("\"\"") : std::string(1, c);
  quoted += '"';
  out << std::setprecision(17) << r.h << ',' << r.R << ',' << r.tau << ',' << r.n << ',' << r.k
      << ',' << r.bracket << ',' << r.term_B << ',' << r.term_groups << ',' << quoted << '\n';
}

}  // namespace eigavg
