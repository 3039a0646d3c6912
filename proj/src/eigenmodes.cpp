#include "eigavg/eigenmodes.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <random>

#include "eigavg/parallel.hpp"

namespace eigavg {

namespace {

constexpr double kPi = std::numbers::pi;

double sphere_h(int l) { return 1.0 / std::sqrt(double(l) * (l + 1)); }

void check_degree(int l) {
  if (l < 0) throw DomainError("eigenmode: negative degree");
  if (l > kMaxDegree) throw OverflowGuardError("eigenmode: degree above " + std::to_string(kMaxDegree));
}

double log_highest_weight_norm(int l) {
  return 0.5 * (std::lgamma(2.0 * l + 2.0) - std::log(4 * kPi)) - l * std::log(2.0) -
         std::lgamma(l + 1.0);
}

double wavelength(const EigenmodeSpec& s) { return 2 * kPi * s.h; }

}  // namespace

std::string to_string(ModeKind k) {
  switch (k) {
    case ModeKind::Zonal: return "zonal";
    case ModeKind::HighestWeight: return "highest_weight";
    case ModeKind::TorusMode: return "torus_mode";
    case ModeKind::RandomSphereMode: return "random_sphere_mode";
    case ModeKind::EuclideanBeam: return "euclidean_beam";
  }
  return "unknown";
}

EigenmodeSpec EigenmodeSpec::zonal(int l, const Eigen::Vector3d& axis) {
  if (l < 1) throw DomainError("zonal: degree must be positive");
  if (!(axis.norm() > 0.0)) throw DomainError("zonal: zero axis");
  EigenmodeSpec s;
  s.kind = ModeKind::Zonal;
  s.l = l;
  s.axis = axis.normalized();
  s.h = sphere_h(l);
  return s;
}

EigenmodeSpec EigenmodeSpec::highest_weight(int l) {
  if (l < 1) throw DomainError("highest_weight: degree must be positive");
  EigenmodeSpec s;
  s.kind = ModeKind::HighestWeight;
  s.l = l;
  s.h = sphere_h(l);
  return s;
}

EigenmodeSpec EigenmodeSpec::torus_mode(const Eigen::Vector2i& m) {
  if (m.isZero()) throw DomainError("torus_mode: m = 0 is not an eigenfunction of -h^2 Delta - 1");
  EigenmodeSpec s;
  s.kind = ModeKind::TorusMode;
  s.m = m;
  s.h = 1.0 / (2 * kPi * m.cast<double>().norm());
  return s;
}

EigenmodeSpec EigenmodeSpec::random_sphere_mode(int l, std::uint64_t seed) {
  if (l < 1) throw DomainError("random_sphere_mode: degree must be positive");
  check_degree(l);
  EigenmodeSpec s;
  s.kind = ModeKind::RandomSphereMode;
  s.l = l;
  s.seed = seed;
  s.h = sphere_h(l);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  s.coefficients.resize(2 * l + 1);
  double norm = 0.0;
  for (double& c : s.coefficients) {
    c = normal(rng);
    norm += c * c;
  }
  for (double& c : s.coefficients) c /= std::sqrt(norm);
  return s;
}

EigenmodeSpec EigenmodeSpec::euclidean_beam(double h, std::function<double(const Eigen::Vector2d&)> a) {
  if (!(h > 0.0)) throw DomainError("euclidean_beam: h must be positive");
  EigenmodeSpec s;
  s.kind = ModeKind::EuclideanBeam;
  s.h = h;
  s.amplitude = std::move(a);
  return s;
}

bool EigenmodeSpec::on_sphere() const {
  return kind == ModeKind::Zonal || kind == ModeKind::HighestWeight ||
         kind == ModeKind::RandomSphereMode;
}

std::string EigenmodeSpec::label() const {
  if (on_sphere()) return std::to_string(l);
  if (kind == ModeKind::TorusMode) return std::to_string(m(0)) + ";" + std::to_string(m(1));
  return "";
}

double legendre(int l, double x) {
  check_degree(l);
  if (l == 0) return 1.0;
  double p0 = 1.0, p1 = x;
  for (int k = 2; k <= l; ++k) {
    const double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
    p0 = p1;
    p1 = p2;
  }
  return p1;
}

std::vector<double> normalized_legendre_row(int l, double x) {
  check_degree(l);
  std::vector<double> out(l + 1, 0.0);
  const double s = std::sqrt(std::max(0.0, 1.0 - x * x));
  // P_m^m in log form so that high orders underflow gracefully near the poles.
  double log_mm = -0.5 * std::log(4 * kPi);
  for (int m = 0; m <= l; ++m) {
    if (m > 0) log_mm += 0.5 * std::log((2.0 * m + 1) / (2.0 * m)) + std::log(s);
    const double pmm = (m % 2 ? -1.0 : 1.0) * std::exp(log_mm);
    if (m == l) {
      out[m] = pmm;
      break;
    }
    double prev = pmm, a_prev = std::sqrt(2.0 * m + 3);
    double cur = x * a_prev * pmm;
    for (int k = m + 2; k <= l; ++k) {
      const double a = std::sqrt((4.0 * k * k - 1) / (double(k) * k - double(m) * m));
      const double next = a * (x * cur - prev / a_prev);
      prev = cur;
      cur = next;
      a_prev = a;
    }
    out[m] = cur;
  }
  return out;
}

GaussRule gauss_legendre(int n) {
  if (n < 1) throw DomainError("gauss_legendre: need at least one node");
  // P_n(z) and P_n'(z).
  auto eval = [n](double z) {
    double p0 = 1.0, p1 = z;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2 * k - 1) * z * p1 - (k - 1) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    if (n == 1) p0 = 1.0;
    return std::make_pair(p1, n * (z * p1 - p0) / (z * z - 1.0));
  };
  GaussRule r;
  r.x.resize(n);
  r.w.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(kPi * (i + 0.75) / (n + 0.5));
    for (int it = 0; it < 100; ++it) {
      const auto [p, dp] = eval(z);
      const double dz = p / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    const double dp = eval(z).second;
    r.x[i] = -z;
    r.x[n - 1 - i] = z;
    r.w[i] = r.w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
  return r;
}

Complex eval_mode(const EigenmodeSpec& spec, const Eigen::Vector3d& X) {
  switch (spec.kind) {
    case ModeKind::Zonal:
      check_degree(spec.l);
      return std::sqrt((2.0 * spec.l + 1) / (4 * kPi)) *
             legendre(spec.l, std::clamp(X.dot(spec.axis), -1.0, 1.0));
    case ModeKind::HighestWeight: {
      check_degree(spec.l);
      const double rho = std::hypot(X(0), X(1));
      if (rho == 0.0) return 0.0;
      return std::polar(std::exp(log_highest_weight_norm(spec.l) + spec.l * std::log(rho)),
                        spec.l * std::atan2(X(1), X(0)));
    }
    case ModeKind::RandomSphereMode: {
      check_degree(spec.l);
      const int l = spec.l;
      const std::vector<double> P = normalized_legendre_row(l, std::clamp(X(2), -1.0, 1.0));
      const double phi = std::atan2(X(1), X(0));
      double v = spec.coefficients[l] * P[0];
      for (int m = 1; m <= l; ++m)
        v += std::sqrt(2.0) * P[m] *
             (spec.coefficients[l + m] * std::cos(m * phi) + spec.coefficients[l - m] * std::sin(m * phi));
      return v;
    }
    default:
      throw DomainError("eval_mode: " + to_string(spec.kind) + " is not a sphere mode");
  }
}

Complex eval_mode(const EigenmodeSpec& spec, const BasePoint& x) {
  switch (spec.kind) {
    case ModeKind::TorusMode:
      return std::polar(1.0, 2 * kPi * (spec.m(0) * x.x(0) + spec.m(1) * x.x(1)));
    case ModeKind::EuclideanBeam: {
      const double a = spec.amplitude ? spec.amplitude(x.x) : 1.0;
      return a * std::pow(spec.h, -0.25) * std::exp(-x.x.squaredNorm() / (2 * spec.h)) *
             std::polar(1.0, x.x(0) / spec.h);
    }
    default:
      return eval_mode(spec, sphere_embed(x));
  }
}

AverageResult average_over(const Submanifold& H, const EigenmodeSpec& spec, int quad_refine) {
  if (quad_refine < 1) throw DomainError("average_over: quad_refine must be at least 1");
  if (spec.kind == ModeKind::EuclideanBeam)
    throw DomainError("average_over: the beam lives on R^2; use beam_restriction");
  if (spec.on_sphere() != (H.manifold().kind == ManifoldKind::Sphere2))
    throw DomainError("average_over: mode and submanifold live on different surfaces");
  AverageResult res;
  if (H.kind() == SubmanifoldKind::Point) {
    res.value = eval_mode(spec, H.quadrature(1).front().x);
    res.nodes = 1;
    return res;
  }
  auto integrate = [&](int count, double& abs_mass) {
    const std::vector<QuadNode> nodes = H.quadrature(count);
    std::vector<Complex> vals(nodes.size());
    parallel_for(static_cast<int>(nodes.size()), [&](int i) { vals[i] = eval_mode(spec, nodes[i].x); });
    Complex sum = 0.0;
    abs_mass = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      sum += nodes[i].weight * vals[i];
      abs_mass += nodes[i].weight * std::abs(vals[i]);
    }
    return sum;
  };
  const int base = std::max(32, static_cast<int>(std::ceil(8.0 * H.volume() / wavelength(spec))));
  double abs_mass = 0.0;
  Complex prev = integrate(base, abs_mass);
  int count = base;
  for (int r = 1; r <= quad_refine; ++r) {
    count *= 2;
    res.value = integrate(count, abs_mass);
    res.error = std::abs(res.value - prev);
    prev = res.value;
  }
  res.nodes = count;
  // Absolute floor for modes that vanish on H, e.g. odd zonal modes on the equator.
  const double scale = std::max({std::abs(res.value), abs_mass, 1e-9 * H.volume()});
  if (res.error > 1e-3 * scale)
    throw QuadratureError("average_over: refinement levels differ by " + std::to_string(res.error) +
                          " against a scale of " + std::to_string(scale));
  return res;
}

Complex beam_restriction(double h, double angle, double half_width) {
  if (!(h > 0.0 && h <= 0.1)) throw DomainError("beam_restriction: h must lie in (0, 0.1]");
  if (!(angle >= 0.0 && angle <= kPi / 2)) throw DomainError("beam_restriction: angle must lie in [0, pi/2]");
  if (half_width <= 0.0) half_width = 20.0 * std::sqrt(h);
  // Extended precision: the phase c s / h reaches hundreds of radians and the
  // non-normal integral cancels down to far below double rounding of the terms.
  using LD = long double;
  using LComplex = std::complex<LD>;
  const LD c = std::cos(LD(angle)), hl = h, scale = std::pow(hl, LD(-0.25));
  static const GaussRule rule = gauss_legendre(20);
  auto composite = [&](int panels, LD& abs_mass) {
    LComplex sum = 0.0L;
    abs_mass = 0.0L;
    const LD width = 2 * LD(half_width) / panels;
    for (int p = 0; p < panels; ++p) {
      const LD mid = -LD(half_width) + (p + 0.5L) * width;
      for (std::size_t i = 0; i < rule.x.size(); ++i) {
        const LD s = mid + 0.5L * width * LD(rule.x[i]);
        const LD w = 0.5L * width * LD(rule.w[i]) * scale * std::exp(-s * s / (2 * hl));
        sum += w * LComplex(std::cos(c * s / hl), std::sin(c * s / hl));
        abs_mass += w;
      }
    }
    return sum;
  };
  const double feature = std::min(std::sqrt(h), c > 0.0L ? 2 * kPi * h / double(c) : std::sqrt(h));
  int panels = std::max(4, static_cast<int>(std::ceil(2 * half_width / feature)));
  LD abs_mass = 0.0L;
  LComplex prev = composite(panels, abs_mass);
  for (int it = 0; it < 12; ++it) {
    panels *= 2;
    const LComplex cur = composite(panels, abs_mass);
    if (std::abs(cur - prev) <= 1e-18L * abs_mass) return Complex(double(cur.real()), double(cur.imag()));
    prev = cur;
  }
  return Complex(double(prev.real()), double(prev.imag()));
}

double l2_norm(const EigenmodeSpec& spec) {
  switch (spec.kind) {
    case ModeKind::TorusMode: {
      const int n = 2 * std::max(std::abs(spec.m(0)), std::abs(spec.m(1))) + 2;
      double sum = 0.0;
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
          sum += std::norm(eval_mode(spec, BasePoint{Eigen::Vector2d(double(a) / n, double(b) / n), 0}));
      return std::sqrt(sum / (double(n) * n));
    }
    case ModeKind::EuclideanBeam:
      throw DomainError("l2_norm: the beam is not normalized on a compact surface");
    default: {
      // Exact for |u|^2 of degree 2l: l + 1 Gauss nodes in cos(theta), 2l + 1 in phi.
      const int nt = spec.l + 2, np = 2 * spec.l + 2;
      const GaussRule g = gauss_legendre(nt);
      std::vector<double> rows(nt, 0.0);
      parallel_for(nt, [&](int i) {
        const double z = g.x[i], s = std::sqrt(1.0 - z * z);
        double acc = 0.0;
        for (int j = 0; j < np; ++j) {
          const double phi = 2 * kPi * j / np;
          acc += std::norm(eval_mode(spec, Eigen::Vector3d(s * std::cos(phi), s * std::sin(phi), z)));
        }
        rows[i] = g.w[i] * acc * 2 * kPi / np;
      });
      double sum = 0.0;
      for (double r : rows) sum += r;
      return std::sqrt(sum);
    }
  }
}

namespace {

struct Candidate {
  double value = 0.0;
  Eigen::Vector3d X = Eigen::Vector3d::Zero();  // sphere point, or (x1, x2, 0) on the torus
};

/// Grid maximum of |u| followed by compass search around the best grid points.
double refined_sup(const EigenmodeSpec& spec, double density) {
  const double spacing = wavelength(spec) / density;
  const bool sphere = spec.on_sphere();
  auto value = [&](const Eigen::Vector3d& X) {
    if (sphere) return std::abs(eval_mode(spec, X));
    return std::abs(eval_mode(spec, BasePoint{Eigen::Vector2d(wrap01(X(0)), wrap01(X(1))), 0}));
  };

  long count;
  std::function<Eigen::Vector3d(long)> point;
  if (sphere) {
    count = std::max(64L, static_cast<long>(std::ceil(4 * kPi / (spacing * spacing))));
    const double golden = kPi * (3.0 - std::sqrt(5.0));
    point = [count, golden](long i) {
      const double z = 1.0 - (2.0 * i + 1.0) / count, r = std::sqrt(1.0 - z * z);
      return Eigen::Vector3d(r * std::cos(golden * i), r * std::sin(golden * i), z);
    };
  } else {
    const long n = std::max(16L, static_cast<long>(std::ceil(1.0 / spacing)));
    count = n * n;
    point = [n](long i) { return Eigen::Vector3d(double(i / n) / n, double(i % n) / n, 0.0); };
  }

  constexpr int kSeeds = 8;
  const int tiles = 256;
  std::vector<std::vector<Candidate>> best(tiles);
  parallel_for(tiles, [&](int t) {
    const long lo = count * t / tiles, hi = count * (t + 1) / tiles;
    std::vector<Candidate>& b = best[t];
    for (long i = lo; i < hi; ++i) {
      const Eigen::Vector3d X = point(i);
      const double v = value(X);
      if (b.size() < kSeeds || v > b.back().value) {
        b.push_back({v, X});
        std::sort(b.begin(), b.end(), [](const Candidate& a, const Candidate& c) { return a.value > c.value; });
        if (b.size() > kSeeds) b.pop_back();
      }
    }
  });
  std::vector<Candidate> seeds;
  for (const auto& b : best) seeds.insert(seeds.end(), b.begin(), b.end());
  std::sort(seeds.begin(), seeds.end(), [](const Candidate& a, const Candidate& c) { return a.value > c.value; });
  seeds.resize(std::min<std::size_t>(kSeeds, seeds.size()));

  double sup = 0.0;
  for (Candidate c : seeds) {
    Eigen::Vector3d e1, e2;
    if (sphere) {
      e1 = c.X.unitOrthogonal();
      e2 = c.X.cross(e1);
    } else {
      e1 = Eigen::Vector3d::UnitX();
      e2 = Eigen::Vector3d::UnitY();
    }
    auto moved = [&](const Eigen::Vector3d& X, const Eigen::Vector3d& d) -> Eigen::Vector3d {
      return sphere ? Eigen::Vector3d((X + d).normalized()) : Eigen::Vector3d(X + d);
    };
    for (double step = spacing; step > 1e-5 * spacing;) {
      bool improved = false;
      const double r = std::sqrt(0.5);
      const std::array<Eigen::Vector3d, 8> dirs{e1, -e1, e2, -e2, r * (e1 + e2), r * (e1 - e2),
                                                r * (e2 - e1), -r * (e1 + e2)};
      for (const Eigen::Vector3d& d : dirs) {
        const Eigen::Vector3d Y = moved(c.X, step * d);
        const double v = value(Y);
        if (v > c.value) {
          c = {v, Y};
          improved = true;
          break;
        }
      }
      if (!improved) step *= 0.5;
    }
    sup = std::max(sup, c.value);
  }
  return sup;
}

}  // namespace

double sup_ratio(const EigenmodeSpec& spec, double grid_density) {
  if (spec.kind == ModeKind::EuclideanBeam) throw DomainError("sup_ratio: the beam is not an eigenfunction");
  if (!(grid_density >= 8.0)) throw DomainError("sup_ratio: need at least 8 grid points per wavelength");
  check_degree(spec.l);
  const double fine = refined_sup(spec, grid_density);
  const double coarse = refined_sup(spec, 0.5 * grid_density);
  if (std::abs(fine - coarse) > 0.01 * fine)
    throw ResolutionError("sup_ratio: estimate moved by " + std::to_string(std::abs(fine - coarse) / fine) +
                          " between grid densities");
  return fine / l2_norm(spec);
}

ScalingFit scaling_fit(const std::vector<std::pair<double, double>>& pairs, FitModel model) {
  if (pairs.size() < 4) throw DomainError("scaling_fit: need at least four pairs");
  double lo = pairs.front().first, hi = lo;
  for (const auto& [h, v] : pairs) {
    if (!(h > 0.0) || !(v > 0.0)) throw DomainError("scaling_fit: h and values must be positive");
    if (model == FitModel::PowerTimesSqrtLog && !(h < 1.0))
      throw DomainError("scaling_fit: log correction needs h < 1");
    lo = std::min(lo, h);
    hi = std::max(hi, h);
  }
  if (std::log10(hi / lo) < 1.0) throw RankError("scaling_fit: abscissae span less than a decade");
  const int cols = model == FitModel::PowerLaw ? 2 : 3;
  Eigen::MatrixXd A(pairs.size(), cols);
  Eigen::VectorXd b(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double lh = std::log(pairs[i].first);
    A(i, 0) = 1.0;
    A(i, 1) = lh;
    if (cols == 3) A(i, 2) = std::log(-lh);
    b(i) = std::log(pairs[i].second);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  qr.setThreshold(1e-10);
  if (qr.rank() < cols) throw RankError("scaling_fit: degenerate design");
  const Eigen::VectorXd x = qr.solve(b);
  ScalingFit fit;
  fit.pairs = pairs;
  fit.model = model;
  fit.prefactor = std::exp(x(0));
  fit.exponent = x(1);
  fit.log_correction = cols == 3 ? x(2) : 0.0;
  fit.residual = (A * x - b).cwiseAbs().maxCoeff();
  return fit;
}

void write_sweep_csv_header(std::ostream& out) {
  out << "kind,l_or_m,h,value_re,value_im,abs,err_estimate\n";
}

void write_sweep_csv_row(std::ostream& out, const SweepRow& r) {
  out << std::setprecision(17) << r.kind << ',' << r.l_or_m << ',' << r.h << ',' << r.value.real() << ','
      << r.value.imag() << ',' << std::abs(r.value) << ',' << r.err_estimate << '\n';
}

}  // namespace eigavg
