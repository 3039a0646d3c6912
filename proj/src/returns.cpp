#include "eigavg/returns.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "eigavg/parallel.hpp"

namespace eigavg {

namespace {

constexpr double kPi = std::numbers::pi;

struct TrackPoint {
  double t;
  CotangentPoint p;
  ConormalDistance d;
};

}  // namespace

double phase_speed_bound(const ManifoldModel& m) {
  switch (m.kind) {
    case ManifoldKind::Sphere2:
      return std::sqrt(2.0);
    case ManifoldKind::FlatTorus2:
      return 1.0;
    case ManifoldKind::ConformalTorus2: {
      const double a = m.amplitude;
      const double dphi = 2.0 * kPi * m.frequency * a;
      return 1.05 * std::sqrt(std::exp(2.0 * a) + dphi * dphi);
    }
  }
  return 1.0;
}

std::vector<Crossing> crossing_events(const Submanifold& H, const CotangentPoint& p0, double T_max,
                                      int direction, const ReturnOptions& opts) {
  if (!(opts.prox_tol > 0)) throw DomainError("proximity tolerance must be positive");
  if (direction != 1 && direction != -1) throw DomainError("direction must be +1 or -1");
  std::vector<Crossing> out;
  if (!(T_max > 0)) return out;
  const ManifoldModel& m = H.manifold();
  const double tol = opts.prox_tol;
  const double h = opts.step > 0 ? opts.step : tol / 4.0;
  const double V = phase_speed_bound(m);
  const bool exact = m.has_closed_form_flow();
  const double sgn = direction;

  auto advance = [&](const TrackPoint& from, double to_t) {
    return exact ? flow_point(m, p0, sgn * to_t, opts.flow)
                 : flow_point(m, from.p, sgn * (to_t - from.t), opts.flow);
  };

  TrackPoint prev{0.0, p0, H.conormal_distance(p0)};
  TrackPoint cur = prev;
  bool have_prev = false;
  bool armed = cur.d.distance > tol;
  while (cur.t < T_max) {
    const double step = cur.d.distance > tol ? std::max(h, (cur.d.distance - tol) / V) : h;
    TrackPoint next;
    next.t = std::min(cur.t + step, T_max);
    next.p = advance(cur, next.t);
    next.d = H.conormal_distance(next.p);

    if (armed && have_prev && cur.d.distance < tol && cur.d.distance <= prev.d.distance &&
        cur.d.distance < next.d.distance) {
      // Golden-section refinement of the local minimum on [prev.t, next.t].
      auto f = [&](double s) { return H.conormal_distance(advance(prev, s)).distance; };
      const double g = 0.5 * (std::sqrt(5.0) - 1.0);
      double a = prev.t, b = next.t;
      double c = b - g * (b - a), d = a + g * (b - a);
      double fc = f(c), fd = f(d);
      for (int it = 0; it < 100 && b - a > 1e-13 * std::max(1.0, b); ++it) {
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
      const double ts = 0.5 * (a + b);
      TrackPoint best{ts, advance(prev, ts), {}};
      best.d = H.conormal_distance(best.p);
      if (cur.d.distance < best.d.distance) best = cur;
      out.push_back({sgn * best.t, best.p, best.d.distance, best.d.param, best.d.branch});
      armed = false;
    }
    prev = cur;
    have_prev = true;
    cur = next;
    if (!armed && cur.d.distance > tol) armed = true;
  }
  return out;
}

ReturnRecord first_return(const Submanifold& H, const ConormalSample& rho, double T_max,
                          const ReturnOptions& opts, int direction) {
  ReturnRecord rec;
  rec.rho = rho;
  rec.crossings = crossing_events(H, rho.rho, T_max, direction, opts);
  if (!rec.crossings.empty()) {
    const Crossing& c = rec.crossings.front();
    rec.T_H = std::abs(c.t);
    rec.eta = c.point;
    rec.eta_residual = c.distance;
  }
  return rec;
}

double loop_fraction(const Submanifold& H, const std::vector<ConormalSample>& samples,
                     double T_max, const ReturnOptions& opts) {
  if (samples.empty()) throw DomainError("no conormal samples");
  std::vector<char> loops(samples.size(), 0);
  if (T_max > 0) {
    parallel_for(static_cast<int>(samples.size()), [&](int i) {
      loops[i] = first_return(H, samples[i], T_max, opts).T_H <= T_max;
    });
  }
  double total = 0, looped = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    total += samples[i].weight;
    if (loops[i]) looped += samples[i].weight;
  }
  return looped / total;
}

void write_returns_csv(std::ostream& out, const std::vector<ReturnRecord>& records) {
  out << "sample_index,base_x1,base_x2,xi1,xi2,T_H,eta_distance_residual,n_crossings\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const ReturnRecord& r = records[i];
    out << i << ',' << r.rho.rho.x(0) << ',' << r.rho.rho.x(1) << ',' << r.rho.rho.xi(0) << ','
        << r.rho.rho.xi(1) << ',';
    if (r.returned())
      out << r.T_H << ',' << r.eta_residual;
    else
      out << "inf,nan";
    out << ',' << r.crossings.size() << '\n';
  }
}

// ---------------------------------------------------------------------------

std::vector<SampleCrossings> compute_crossings(const Submanifold& H,
                                               const std::vector<ConormalSample>& samples,
                                               double horizon, const ReturnOptions& opts) {
  std::vector<SampleCrossings> out(samples.size());
  parallel_for(static_cast<int>(samples.size()), [&](int i) {
    out[i].forward = crossing_events(H, samples[i].rho, horizon, 1, opts);
    out[i].backward = crossing_events(H, samples[i].rho, horizon, -1, opts);
  });
  return out;
}

double RecurrenceDecomposition::total() const {
  double s = 0;
  for (double w : weights) s += w;
  return s;
}

double RecurrenceDecomposition::sigma_E(int i) const {
  double s = 0;
  for (int j : E[i]) s += weights[j];
  return s;
}

std::vector<int> RecurrenceDecomposition::B(int N) const {
  if (N < 1) throw DomainError("N counts balls from 1");
  const int groups = std::min<int>(N - 1, static_cast<int>(E.size()));
  std::vector<char> in_group(weights.size(), 0);
  for (int i = 0; i < groups; ++i)
    for (int j : E[i]) in_group[j] = 1;
  std::vector<int> out;
  for (std::size_t j = 0; j < weights.size(); ++j)
    if (!in_group[j]) out.push_back(static_cast<int>(j));
  return out;
}

double RecurrenceDecomposition::sigma_B(int N) const {
  double s = 0;
  for (int j : B(N)) s += weights[j];
  return s;
}

double RecurrenceDecomposition::bracket(int N, double S) const {
  if (!conclusive) throw AssertionFailure("recurrence decomposition is inconclusive");
  if (!(S > T)) throw DomainError("S must exceed T");
  double b = std::sqrt(sigma_B(N));
  const int groups = std::min<int>(N - 1, static_cast<int>(E.size()));
  for (int i = 0; i < groups; ++i) b += std::sqrt(sigma_E(i)) * std::sqrt(T / S);
  return b;
}

RecurrenceDecomposition recurrence_decomposition(const Submanifold& H,
                                                 const std::vector<ConormalSample>& samples,
                                                 const std::vector<ConormalBall>& balls, double T,
                                                 const RecurrenceOptions& opts) {
  const double horizon = opts.horizon > 0 ? opts.horizon : 4.0 * T;
  if (horizon > opts.horizon_cap) {
    return recurrence_decomposition(H, samples, balls, T, {}, horizon, opts.horizon_cap);
  }
  const auto crossings = compute_crossings(H, samples, horizon, opts.returns);
  return recurrence_decomposition(H, samples, balls, T, crossings, horizon, opts.horizon_cap);
}

RecurrenceDecomposition recurrence_decomposition(const Submanifold& H,
                                                 const std::vector<ConormalSample>& samples,
                                                 const std::vector<ConormalBall>& balls, double T,
                                                 const std::vector<SampleCrossings>& crossings,
                                                 double horizon, double horizon_cap) {
  if (!(T > 0)) throw DomainError("T must be positive");
  if (horizon < 4.0 * T) throw DomainError("horizon must be at least 4T");
  RecurrenceDecomposition out;
  out.T = T;
  out.horizon = horizon;
  const ManifoldModel& m = H.manifold();
  const std::size_t n = samples.size(), nb = balls.size();
  out.weights.resize(n);
  for (std::size_t j = 0; j < n; ++j) out.weights[j] = samples[j].weight;
  out.members.assign(nb, {});
  out.E_plus.assign(nb, {});
  out.E_minus.assign(nb, {});
  out.E.assign(nb, {});
  for (std::size_t j = 0; j < n; ++j) {
    bool covered = false;
    for (std::size_t i = 0; i < nb; ++i) {
      if (phase_distance(m, samples[j].rho, balls[i].center) < balls[i].radius) {
        out.members[i].push_back(static_cast<int>(j));
        covered = true;
      }
    }
    if (!covered) throw CoverError("conormal sample " + std::to_string(j) + " lies in no ball");
  }
  if (horizon > horizon_cap) return out;  // inconclusive: nothing is classified
  if (crossings.size() != n) throw DomainError("crossing list does not match the samples");
  out.conclusive = true;

  auto lands_in = [&](const Crossing& c, const ConormalBall& ball) {
    return phase_distance(m, H.conormal_at(c.param, c.branch == 0 ? 1 : c.branch), ball.center) <
           ball.radius;
  };
  auto escapes = [&](const std::vector<Crossing>& list, const ConormalBall& ball) {
    for (const Crossing& c : list) {
      const double at = std::abs(c.t);
      if (at > T && at <= horizon && lands_in(c, ball)) return false;
    }
    return true;
  };
  for (std::size_t i = 0; i < nb; ++i) {
    for (int j : out.members[i]) {
      const bool plus = escapes(crossings[j].forward, balls[i]);
      const bool minus = escapes(crossings[j].backward, balls[i]);
      if (plus) out.E_plus[i].push_back(j);
      if (minus) out.E_minus[i].push_back(j);
      if (plus || minus) out.E[i].push_back(j);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

int ConjugacyReport::multiplicity_in(double a, double b) const {
  int total = 0;
  for (const ConjugateEvent& e : events)
    if (e.t >= a && e.t <= b) total += e.multiplicity;
  return total;
}

namespace {

// Root of the cubic Hermite interpolant of J on [t0, t1].
double hermite_root(double t0, double t1, double j0, double d0, double j1, double d1) {
  const double h = t1 - t0;
  auto H = [&](double s) {
    const double s2 = s * s, s3 = s2 * s;
    return (2 * s3 - 3 * s2 + 1) * j0 + (s3 - 2 * s2 + s) * h * d0 + (-2 * s3 + 3 * s2) * j1 +
           (s3 - s2) * h * d1;
  };
  double a = 0, b = 1, fa = H(0);
  for (int it = 0; it < 80; ++it) {
    const double c = 0.5 * (a + b), fc = H(c);
    if ((fc < 0) == (fa < 0))
      a = c, fa = fc;
    else
      b = c;
  }
  return t0 + 0.5 * (a + b) * h;
}

}  // namespace

ConjugacyReport conjugate_points(const ManifoldModel& m, const CotangentPoint& seed, double t_begin,
                                 double t_end, double r, const JacobiOptions& opts) {
  if (std::abs(conorm(m, seed) - 1.0) > 1e-8) throw DomainError("Jacobi seed must be unit");
  if (!(opts.step > 0)) throw DomainError("Jacobi step must be positive");
  ConjugacyReport rep;
  rep.gamma_seed = seed;
  rep.r = r;
  if (!(t_end > 0)) return rep;

  const int n = static_cast<int>(std::ceil(t_end / opts.step));
  const double h = t_end / n;
  // State: x1, x2, xi1, xi2, J, J'. Curvature is constant on the closed-form models.
  using State = Eigen::Matrix<double, 6, 1>;
  const bool constant_K = m.kind == ManifoldKind::Sphere2 || m.is_flat();
  const double K0 = m.kind == ManifoldKind::Sphere2 ? 1.0 : 0.0;
  auto rhs = [&](const State& s) {
    State d;
    double K = K0;
    if (!constant_K) {
      d.head<4>() = hamilton_rhs<double>(m, s.head<4>());
      K = gauss_curvature(m, {s.head<2>(), 0});
    } else {
      d.head<4>().setZero();
    }
    d(4) = s(5);
    d(5) = -K * s(4);
    return d;
  };
  State s;
  s << seed.x, seed.xi, 0.0, 1.0;
  double t = 0;
  for (int i = 0; i < n; ++i) {
    const State k1 = rhs(s), k2 = rhs(s + 0.5 * h * k1), k3 = rhs(s + 0.5 * h * k2),
                k4 = rhs(s + h * k3);
    const State next = s + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    const double t1 = t + h;
    if (i > 0 && (s(4) < 0) != (next(4) < 0)) {
      const double root = hermite_root(t, t1, s(4), s(5), next(4), next(5));
      if (root > t_begin && root <= t_end) rep.events.push_back({root, 1});
    } else if (next(4) == 0.0 && t1 > t_begin) {
      rep.events.push_back({t1, 1});
    }
    s = next;
    t = t1;
  }
  return rep;
}

ConjugacyCertificate conjugacy_certificate(const ManifoldModel& m, const std::vector<BasePoint>& U,
                                           double T, double a, const ConjugacyOptions& opts) {
  if (!(T > 0) || !(a > 0)) throw DomainError("T and a must be positive");
  if (opts.directions < 1) throw DomainError("need at least one direction");
  const double horizon = opts.horizon > 0 ? opts.horizon : 2.0 * T;
  const int need = m.dim - 1;
  auto r_a = [&](double t) { return std::exp(-a * t) / a; };
  const double t_last = horizon + r_a(T);

  ConjugacyCertificate cert;
  std::vector<ConjugacyCertificate> per_point(U.size());
  parallel_for(static_cast<int>(U.size()), [&](int ui) {
    const BasePoint& x = U[ui];
    ConjugacyCertificate& local = per_point[ui];
    std::vector<CotangentPoint> seeds;
    std::vector<ConjugacyReport> reports;
    for (int k = 0; k < opts.directions; ++k) {
      const double angle = 2.0 * kPi * k / opts.directions;
      seeds.push_back(unit_covector(m, x, angle));
      reports.push_back(conjugate_points(m, seeds.back(), 0.0, t_last, 0.0, opts.jacobi));
    }
    const double lower = m.is_torus() ? std::exp(-m.amplitude) : 1.0;
    for (double t = T; t <= horizon; t += r_a(t)) {
      ++local.grid_points;
      const double r = r_a(t);
      for (int k = 0; k < opts.directions; ++k) {
        if (reports[k].multiplicity_in(t - r, t + r) < need) continue;
        const BasePoint y = flow_point(m, seeds[k], t, opts.jacobi.flow).base();
        double d;
        if (m.has_closed_form_flow()) {
          d = distance(m, x, y);
        } else {
          // Conformal factor bracket first; shoot only when it is inconclusive.
          const double flat = distance(ManifoldModel::flat_torus(), x, y);
          d = lower * flat >= r ? lower * flat : distance(m, x, y);
        }
        if (d < r) {
          local.holds = false;
          local.witnesses.push_back({x, t, 2.0 * kPi * k / opts.directions, d, r});
          return;
        }
      }
    }
  });
  for (const ConjugacyCertificate& c : per_point) {
    cert.grid_points += c.grid_points;
    if (!c.holds) {
      cert.holds = false;
      cert.witnesses.insert(cert.witnesses.end(), c.witnesses.begin(), c.witnesses.end());
    }
  }
  return cert;
}

}  // namespace eigavg
