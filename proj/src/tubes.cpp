#include "eigavg/tubes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "eigavg/parallel.hpp"
#include "eigavg/proximity.hpp"
#include "eigavg/returns.hpp"

namespace eigavg {

namespace {

/// G^u(q) for u = u0 + k du, k = 0..count-1.
std::vector<CotangentPoint> trajectory(const ManifoldModel& m, const CotangentPoint& q, double u0,
                                       double du, int count, const FlowConfig& flow) {
  std::vector<CotangentPoint> out;
  out.reserve(count);
  if (m.has_closed_form_flow()) {
    for (int k = 0; k < count; ++k) out.push_back(flow_point(m, q, u0 + k * du, flow));
    return out;
  }
  CotangentPoint p = u0 == 0.0 ? q : flow_point(m, q, u0, flow);
  out.push_back(p);
  for (int k = 1; k < count; ++k) {
    p = flow_point(m, p, du, flow);
    out.push_back(p);
  }
  return out;
}

/// Grid on [a, b] with spacing at most `max_step`; returns (start, step, count).
struct Grid {
  double start, step;
  int count;
};

Grid make_grid(double a, double b, double max_step) {
  const int intervals = std::max(1, static_cast<int>(std::ceil((b - a) / max_step - 1e-12)));
  return {a, (b - a) / intervals, intervals + 1};
}

struct Golden {
  double x, f;
};

template <typename F>
Golden golden_min(F&& f, double a, double b, double tol) {
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < 200 && b - a > tol; ++it) {
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
  const double x = 0.5 * (a + b);
  return {x, f(x)};
}

/// All tubes whose flowed transversal points come within R of the union's skeleton.
std::vector<WindowViolation> window_violations(const Submanifold& H,
                                               const std::vector<Tube>& tubes,
                                               const std::vector<int>& indices, double t0,
                                               double T1, WindowDirection dir,
                                               const WindowOptions& opts, bool stop_at_first) {
  std::vector<WindowViolation> out;
  if (indices.empty()) return out;
  const ManifoldModel& m = H.manifold();
  double R = tubes[indices.front()].radius;
  double reach = 0.0;
  for (int i : indices) {
    R = std::min(R, tubes[i].radius);
    reach = std::max(reach, tubes[i].tau + tubes[i].radius);
  }
  ProximityIndex index(R);
  for (int i : indices)
    for (const PhaseVector& v : tubes[i].skeleton) index.insert(v, i);

  const double V = phase_speed_bound(m);
  const double max_step = opts.step > 0.0 ? opts.step : R / (2.0 * V);
  const double sgn = dir == WindowDirection::Forward ? 1.0 : -1.0;
  const Grid grid = make_grid(t0 - reach, T1 + reach, max_step);

  std::vector<std::optional<WindowViolation>> found(indices.size());
  parallel_for(static_cast<int>(indices.size()), [&](int k) {
    const Tube& tube = tubes[indices[k]];
    for (const CotangentPoint& q : tube.transversal) {
      const auto path = trajectory(m, q, sgn * grid.start, sgn * grid.step, grid.count, opts.flow);
      for (int j = 0; j < grid.count; ++j) {
        const auto hit = index.nearest_within(phase_embed(m, path[j]), R);
        if (!hit) continue;
        const WindowViolation v{indices[k], index.label(hit->first),
                                sgn * (grid.start + j * grid.step), hit->second};
        if (!found[k] || std::abs(v.s) < std::abs(found[k]->s)) found[k] = v;
        break;
      }
    }
  });
  for (auto& f : found) {
    if (!f) continue;
    out.push_back(*f);
    if (stop_at_first) break;
  }
  return out;
}

}  // namespace

std::string to_string(WindowDirection d) {
  return d == WindowDirection::Forward ? "forward" : "backward";
}

Tube make_tube(const Submanifold& H, const ConormalSample& center, double tau, double R,
               const FlowConfig& flow) {
  if (!(R > 0.0) || !(tau >= 0.0)) throw DomainError("make_tube: need R > 0 and tau >= 0");
  const ManifoldModel& m = H.manifold();
  const double V = phase_speed_bound(m);
  const Grid times = make_grid(-(tau + R), tau + R, R / (4.0 * V));
  const auto center_path = trajectory(m, center.rho, times.start, times.step, times.count, flow);

  Tube tube;
  tube.center = center;
  tube.tau = tau;
  tube.radius = R;

  // Transversal ball in SN*H, shrunk until the flow-out stays coherent.
  const double period = H.param_period();
  const int branch = center.branch;
  for (double r = R;; r *= 0.5) {
    std::vector<CotangentPoint> ball{center.rho};
    const double ds = R / 8.0;
    for (int sign : {1, -1})
      for (int k = 1; k * ds < 0.5 * period; ++k) {
        const CotangentPoint q = H.conormal_at(center.param + sign * k * ds, branch);
        if (phase_distance(m, q, center.rho) > r) break;
        ball.push_back(q);
      }
    std::vector<PhaseVector> skeleton;
    double coherence = 0.0;
    for (const CotangentPoint& q : ball) {
      const auto path = trajectory(m, q, times.start, times.step, times.count, flow);
      for (int j = 0; j < times.count; ++j) {
        coherence = std::max(coherence, phase_distance(m, path[j], center_path[j]));
        skeleton.push_back(phase_embed(m, path[j]));
      }
    }
    if (coherence <= R * (1.0 + 1e-3) || ball.size() == 1) {
      tube.transversal_radius = ball.size() == 1 ? 0.0 : r;
      tube.transversal = std::move(ball);
      tube.skeleton = std::move(skeleton);
      tube.coherence = coherence;
      break;
    }
  }
  tube.hash = skeleton_hash(tube);
  return tube;
}

TubeCover build_cover(const Submanifold& H, const std::vector<ConormalSample>& samples,
                      const CoverOptions& opts) {
  if (!(opts.R > 0.0)) throw DomainError("build_cover: R must be positive");
  if (opts.h > 0.0) {
    if (opts.R < 5.0 * std::pow(opts.h, opts.delta) * (1.0 - 1e-12))
      throw DomainError("build_cover: R below 5 h^delta");
    if (opts.tau > opts.tau0) throw DomainError("build_cover: tau above tau0");
  }
  const ManifoldModel& m = H.manifold();
  TubeCover cover;

  // Maximal R/2-separated centers.
  ProximityIndex centers(0.5 * opts.R);
  std::vector<int> center_samples;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const PhaseVector v = phase_embed(m, samples[i].rho);
    if (centers.nearest_within(v, 0.5 * opts.R)) continue;
    centers.insert(v, static_cast<int>(center_samples.size()));
    center_samples.push_back(static_cast<int>(i));
  }

  cover.tubes.resize(center_samples.size());
  parallel_for(static_cast<int>(center_samples.size()), [&](int k) {
    cover.tubes[k] = make_tube(H, samples[center_samples[k]], opts.tau, opts.R, opts.flow);
  });

  cover.sample_tube.resize(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto hit = centers.nearest_within(phase_embed(m, samples[i].rho), opts.R);
    if (!hit) throw CoverError("build_cover: sample outside every tube");
    cover.sample_tube[i] = centers.label(hit->first);
  }

  // Conflicts: skeletons within R of each other.
  ProximityIndex all(opts.R);
  for (std::size_t k = 0; k < cover.tubes.size(); ++k)
    for (const PhaseVector& v : cover.tubes[k].skeleton) all.insert(v, static_cast<int>(k));
  std::vector<std::set<int>> conflicts(cover.tubes.size());
  parallel_for(static_cast<int>(cover.tubes.size()), [&](int k) {
    for (const PhaseVector& v : cover.tubes[k].skeleton)
      all.for_each_within(v, opts.R, [&](int idx, double) {
        const int other = all.label(idx);
        if (other != k) conflicts[k].insert(other);
      });
  });

  for (std::size_t k = 0; k < cover.tubes.size(); ++k) {
    std::set<int> used;
    for (int other : conflicts[k])
      if (cover.tubes[other].color >= 0) used.insert(cover.tubes[other].color);
    int c = 0;
    while (used.count(c)) ++c;
    if (c >= opts.color_cap)
      throw ColorBudgetError("build_cover: coloring needs more than " +
                             std::to_string(opts.color_cap) + " colors");
    cover.tubes[k].color = c;
    cover.colors = std::max(cover.colors, c + 1);
  }
  return cover;
}

double skeleton_distance(const Tube& a, const Tube& b) {
  double best = std::numeric_limits<double>::infinity();
  for (const PhaseVector& u : a.skeleton)
    for (const PhaseVector& v : b.skeleton) best = std::min(best, (u - v).norm());
  return best;
}

WindowCheck check_window(const Submanifold& H, const std::vector<Tube>& tubes,
                         const std::vector<int>& indices, double t0, double T1,
                         const WindowOptions& opts) {
  if (!(t0 < T1)) throw DomainError("check_window: need t0 < T1");
  WindowCheck result;
  std::vector<WindowDirection> dirs{WindowDirection::Forward, WindowDirection::Backward};
  if (opts.only) dirs = {*opts.only};
  for (WindowDirection d : dirs) {
    result.direction = d;
    const auto v = window_violations(H, tubes, indices, t0, T1, d, opts, true);
    if (v.empty()) {
      result.certified = true;
      result.violation.reset();
      return result;
    }
    if (!result.violation) result.violation = v.front();
  }
  result.direction = dirs.front();
  return result;
}

// ---------------------------------------------------------------------------

void PartitionCertificate::check_ehrenfest(double Lambda) const {
  if (!(h > 0.0 && h < 1.0)) return;
  const double Te = ehrenfest_time(h, Lambda);
  for (const auto& g : groups)
    if (g.T > 2.0 * alpha * Te * (1.0 + 1e-12))
      throw AssertionFailure("certificate: window end " + std::to_string(g.T) +
                             " exceeds 2 alpha T_e(h) = " + std::to_string(2.0 * alpha * Te));
  if (R > 0.0 && R < 1.0) {
    const double cap = 1.0 - 2.0 * std::log(R) / std::log(h);
    if (!(alpha < cap))
      throw AssertionFailure("certificate: alpha " + std::to_string(alpha) +
                             " not below 1 - 2 log R / log h = " + std::to_string(cap));
  }
}

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t hash = seed;
  for (std::size_t i = 0; i < bytes; ++i) {
    hash ^= p[i];
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::uint64_t skeleton_hash(const Tube& t) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (const PhaseVector& v : t.skeleton) hash = fnv1a(v.data(), sizeof(double) * 6, hash);
  return hash;
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

nlohmann::json to_json(const PartitionCertificate& c) {
  nlohmann::json j;
  j["mechanism"] = c.mechanism;
  j["h"] = c.h;
  j["delta"] = c.delta;
  j["R"] = c.R;
  j["tau"] = c.tau;
  j["alpha"] = c.alpha;
  j["B"] = c.B;
  j["sigma_B"] = c.sigma_B;
  j["sigma_total"] = c.sigma_total;
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : c.groups)
    groups.push_back({{"members", g.members},
                      {"t", g.t},
                      {"T", g.T},
                      {"direction", to_string(g.direction)},
                      {"sigma", g.sigma}});
  j["groups"] = groups;
  nlohmann::json hashes = nlohmann::json::array();
  for (auto h : c.skeleton_hashes) hashes.push_back(hex64(h));
  j["skeleton_hashes"] = hashes;
  std::uint64_t all = 0xcbf29ce484222325ULL;
  for (auto h : c.skeleton_hashes) all = fnv1a(&h, sizeof h, all);
  j["skeleton_digest"] = hex64(all);
  j["notes"] = c.notes;
  return j;
}

PartitionCertificate certificate_from_json(const nlohmann::json& j) {
  PartitionCertificate c;
  c.mechanism = j.at("mechanism").get<std::string>();
  c.h = j.at("h").get<double>();
  c.delta = j.at("delta").get<double>();
  c.R = j.at("R").get<double>();
  c.tau = j.at("tau").get<double>();
  c.alpha = j.at("alpha").get<double>();
  c.B = j.at("B").get<std::vector<int>>();
  c.sigma_B = j.at("sigma_B").get<double>();
  c.sigma_total = j.at("sigma_total").get<double>();
  for (const auto& g : j.at("groups")) {
    PartitionGroup pg;
    pg.members = g.at("members").get<std::vector<int>>();
    pg.t = g.at("t").get<double>();
    pg.T = g.at("T").get<double>();
    pg.direction = g.at("direction").get<std::string>() == "backward" ? WindowDirection::Backward
                                                                      : WindowDirection::Forward;
    pg.sigma = g.at("sigma").get<double>();
    c.groups.push_back(std::move(pg));
  }
  for (const auto& h : j.at("skeleton_hashes"))
    c.skeleton_hashes.push_back(std::stoull(h.get<std::string>(), nullptr, 16));
  c.notes = j.at("notes").get<std::vector<std::string>>();
  return c;
}

bool reverify(const Submanifold& H, const std::vector<Tube>& tubes,
              const PartitionCertificate& cert, const WindowOptions& opts) {
  if (cert.skeleton_hashes.size() == tubes.size())
    for (std::size_t i = 0; i < tubes.size(); ++i)
      if (skeleton_hash(tubes[i]) != cert.skeleton_hashes[i]) return false;
  std::vector<char> covered(tubes.size(), 0);
  for (int i : cert.B) covered.at(i) = 1;
  for (const auto& g : cert.groups)
    for (int i : g.members) covered.at(i) = 1;
  if (std::find(covered.begin(), covered.end(), 0) != covered.end()) return false;

  for (const auto& g : cert.groups) {
    if (g.members.empty()) continue;
    double R = tubes[g.members.front()].radius;
    for (int i : g.members) R = std::min(R, tubes[i].radius);
    WindowOptions o = opts;
    o.only = g.direction;
    o.step = 0.5 * (opts.step > 0.0 ? opts.step : R / (2.0 * phase_speed_bound(H.manifold())));
    if (!check_window(H, tubes, g.members, g.t, g.T, o).certified) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

RotationResult rotation_partition(const Submanifold& H, const ConormalSample& rho, double t0,
                                  double T1, const RotationOptions& opts) {
  if (!(t0 < T1)) throw DomainError("rotation_partition: need t0 < T1");
  const ManifoldModel& m = H.manifold();
  const int branch = rho.branch;
  const double R = opts.R;
  RotationResult res;
  res.t0 = t0;
  res.T1 = T1;

  // Cover of B_rho by tubes with centers R/2 apart.
  const int half = static_cast<int>(std::floor(opts.ball_radius / (0.5 * R)));
  std::vector<double> center_params;
  for (int k = -half; k <= half; ++k) center_params.push_back(rho.param + 0.5 * R * k);
  res.tubes.resize(center_params.size());
  parallel_for(static_cast<int>(center_params.size()), [&](int k) {
    ConormalSample c{H.conormal_at(center_params[k], branch), 0.0, 0, branch, center_params[k]};
    res.tubes[k] = make_tube(H, c, opts.tau, R, opts.flow);
  });

  // Events of the flowed ball near SN*H, on a parameter grid R/4 apart.
  const double reach = opts.tau + R;
  const double lo = std::max(0.0, t0 - reach), hi = T1 + reach;
  ReturnOptions ro;
  ro.prox_tol = std::max(R, hi * R / 4.0);
  ro.flow = opts.flow;
  const double ds = 0.25 * R;
  const int fine = static_cast<int>(std::floor(opts.ball_radius / ds));
  std::vector<double> params;
  for (int k = -fine; k <= fine; ++k) params.push_back(rho.param + ds * k);
  std::vector<std::vector<Crossing>> events(params.size());
  parallel_for(static_cast<int>(params.size()), [&](int k) {
    for (const Crossing& c : crossing_events(H, H.conormal_at(params[k], branch), hi, 1, ro))
      if (c.t >= lo) events[k].push_back(c);
  });

  // Local minima in the parameter, refined jointly in (s, t).
  auto dist_at = [&](double s, double t) {
    return H.conormal_distance(flow_point(m, H.conormal_at(s, branch), t, opts.flow)).distance;
  };
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (const Crossing& c : events[k]) {
      bool minimal = true;
      for (std::size_t nb : {k - 1, k + 1}) {
        if (nb >= params.size()) continue;
        for (const Crossing& o : events[nb])
          if (std::abs(o.t - c.t) < 0.5 && o.distance < c.distance) minimal = false;
      }
      if (!minimal) continue;
      const double tw = std::max(0.05, 4.0 * ro.prox_tol);
      auto inner = [&](double s) {
        return golden_min([&](double t) { return dist_at(s, t); }, c.t - tw, c.t + tw, 1e-12);
      };
      const Golden sbest =
          golden_min([&](double s) { return inner(s).f; }, params[k] - ds, params[k] + ds, 1e-11);
      const Golden tbest = inner(sbest.x);
      if (tbest.f > 1e-6 || tbest.x < t0 - reach || tbest.x > T1 + reach) continue;
      bool dup = false;
      for (const auto& x : res.intersections)
        if (std::abs(x.t - tbest.x) < 1e-6 && std::abs(x.param - sbest.x) < 1e-6) dup = true;
      if (dup) continue;

      RotationIntersection x;
      x.t = tbest.x;
      x.param = sbest.x;
      const CotangentPoint land = flow_point(m, H.conormal_at(x.param, branch), x.t, opts.flow);
      const ConormalDistance nd = H.conormal_distance(land);
      x.landing = nd.param;
      x.landing_branch = nd.branch;

      // Principal angle between T SN*H and span(H_p, d/ds G^t q_s) in the lift.
      const double e = 1e-6;
      auto lift = [&](double s, double t) {
        return phase_embed(m, flow_point(m, H.conormal_at(s, branch), t, opts.flow));
      };
      const PhaseVector hp = (lift(x.param, x.t + e) - lift(x.param, x.t - e)) / (2 * e);
      const PhaseVector dv = (lift(x.param + e, x.t) - lift(x.param - e, x.t)) / (2 * e);
      const PhaseVector w = (phase_embed(m, H.conormal_at(nd.param + e, nd.branch)) -
                             phase_embed(m, H.conormal_at(nd.param - e, nd.branch))) /
                            (2 * e);
      Eigen::Matrix<double, 6, 2> P;
      P << hp, dv;
      const Eigen::Vector2d coef = P.colPivHouseholderQr().solve(w);
      const double perp = (w - P * coef).norm() / w.norm();
      x.angle = std::asin(std::clamp(perp, 0.0, 1.0));
      if (x.angle < opts.angle_threshold)
        throw TransversalityError("rotation_partition: flow-out not transverse at t = " +
                                  std::to_string(x.t) + " (angle " + std::to_string(x.angle) +
                                  ")");
      res.intersections.push_back(x);
    }
  }

  // Tubes around the intersection pre-images go aside; the rest is certified.
  std::vector<char> aside(res.tubes.size(), 0);
  for (const auto& x : res.intersections) {
    const CotangentPoint q = H.conormal_at(x.param, branch);
    for (std::size_t k = 0; k < res.tubes.size(); ++k)
      if (phase_distance(m, q, res.tubes[k].center.rho) < R) aside[k] = 1;
  }
  WindowOptions wo;
  wo.flow = opts.flow;
  wo.only = WindowDirection::Forward;
  const int cap = static_cast<int>(res.tubes.size());
  for (int round = 0; round < cap; ++round) {
    std::vector<int> rest;
    for (std::size_t k = 0; k < res.tubes.size(); ++k)
      if (!aside[k]) rest.push_back(static_cast<int>(k));
    const auto v = window_violations(H, res.tubes, rest, t0, T1, WindowDirection::Forward, wo,
                                     false);
    if (v.empty()) break;
    for (const auto& viol : v) aside[viol.tube] = 1;
  }
  for (std::size_t k = 0; k < res.tubes.size(); ++k)
    (aside[k] ? res.lower_dim_cover : res.complement).push_back(static_cast<int>(k));
  res.window = check_window(H, res.tubes, res.complement, t0, T1, wo);
  return res;
}

}  // namespace eigavg
