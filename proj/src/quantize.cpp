#include "eigavg/quantize.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <istream>
#include <memory>
#include <numbers>
#include <ostream>

#include <unsupported/Eigen/FFT>

#include "eigavg/errors.hpp"
#include "eigavg/parallel.hpp"

namespace eigavg {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// S(t) = int_0^t phi / int_0^1 phi for the standard bump phi on [0, 1], tabulated
/// with its derivative and read back by cubic Hermite interpolation.
class SmoothStep {
 public:
  SmoothStep() {
    constexpr int kFine = 16;
    const int m = kCells * kFine;
    std::vector<double> cum(m + 1, 0.0);
    for (int i = 0; i < m; ++i) {
      const double a = static_cast<double>(i) / m, b = static_cast<double>(i + 1) / m;
      cum[i + 1] = cum[i] + (b - a) / 6.0 * (bump(a) + 4.0 * bump(0.5 * (a + b)) + bump(b));
    }
    const double total = cum[m];
    s_.resize(kCells + 1);
    d_.resize(kCells + 1);
    for (int i = 0; i <= kCells; ++i) {
      s_[i] = cum[i * kFine] / total;
      d_[i] = bump(static_cast<double>(i) / kCells) / total;
    }
  }

  double operator()(double t) const {
    if (t <= 0.0) return 0.0;
    if (t >= 1.0) return 1.0;
    const double u = t * kCells;
    const int i = std::min(kCells - 1, static_cast<int>(u));
    const double r = u - i, dt = 1.0 / kCells;
    const double h00 = (1 + 2 * r) * (1 - r) * (1 - r), h10 = r * (1 - r) * (1 - r);
    const double h01 = r * r * (3 - 2 * r), h11 = r * r * (r - 1);
    return h00 * s_[i] + h10 * dt * d_[i] + h01 * s_[i + 1] + h11 * dt * d_[i + 1];
  }

 private:
  static constexpr int kCells = 4096;
  static double bump(double s) {
    const double y = 2.0 * s - 1.0;
    return std::abs(y) >= 1.0 ? 0.0 : std::exp(-1.0 / (1.0 - y * y));
  }
  std::vector<double> s_, d_;
};

const SmoothStep& smooth_step() {
  static const SmoothStep s;
  return s;
}

/// One for d <= inner, zero for d >= inner + width.
double step_down(double d, double inner, double width) {
  return 1.0 - smooth_step()((d - inner) / width);
}

double wrap_angle(double t) {
  t = std::fmod(t, kTwoPi);
  return t < 0.0 ? t + kTwoPi : t;
}

/// Chord between the unit covectors at angles a and b.
double angle_chord(double a, double b) { return 2.0 * std::abs(std::sin(0.5 * (a - b))); }

int frequency(int a, int N) { return a < N / 2 ? a : a - N; }

int column_of(double theta, int ntheta) {
  const long c = std::lround(wrap_angle(theta) / kTwoPi * ntheta);
  return static_cast<int>(c % ntheta);
}

double normalizer(double s) { return s >= 1.0 ? s : 0.5 * (1.0 + s * s); }

void check_same_grids(const std::vector<SymbolGrid>& family) {
  if (family.empty()) throw DomainError("empty symbol family");
  for (const auto& a : family)
    if (a.nx != family.front().nx || a.ntheta != family.front().ntheta)
      throw DomainError("symbol family on different grids");
}

/// Union of active columns and, per member, the position of its columns in the union.
std::vector<int> union_columns(const std::vector<SymbolGrid>& family,
                               const std::vector<int>& indices,
                               std::vector<std::vector<int>>& where) {
  std::vector<int> cols;
  for (int j : indices) cols.insert(cols.end(), family[j].active.begin(), family[j].active.end());
  std::sort(cols.begin(), cols.end());
  cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
  where.clear();
  for (int j : indices) {
    std::vector<int> w;
    for (int c : family[j].active)
      w.push_back(static_cast<int>(std::lower_bound(cols.begin(), cols.end(), c) - cols.begin()));
    where.push_back(std::move(w));
  }
  return cols;
}

}  // namespace


// ---------------------------------------------------------------------------
// Grid fields

GridField GridField::zeros(int N, double h) {
  GridField g;
  g.N = N;
  g.h = h;
  g.values = Eigen::MatrixXcd::Zero(std::max(N, 0), std::max(N, 0));
  g.validate();
  return g;
}

GridField GridField::from_modes(int N, double h,
                                const std::vector<std::pair<Eigen::Vector2i, Complex>>& terms) {
  GridField g = zeros(N, h);
  std::vector<Complex> roots(N);
  for (int k = 0; k < N; ++k) roots[k] = std::polar(1.0, kTwoPi * k / N);
  for (const auto& [m, c] : terms) {
    const long m1 = ((m(0) % N) + N) % N, m2 = ((m(1) % N) + N) % N;
    for (int b = 0; b < N; ++b)
      for (int a = 0; a < N; ++a) g.values(a, b) += c * roots[(m1 * a + m2 * b) % N];
  }
  return g;
}

void GridField::validate() const {
  if (N < 8 || (N & (N - 1)) != 0) throw DomainError("grid size must be a power of two >= 8");
  if (!(h > 0.0)) throw DomainError("grid field needs h > 0");
  if (kTwoPi * h * N < 8.0 * (1.0 - 1e-12))
    throw DomainError("grid has fewer than 8 points per wavelength");
  if (values.rows() != N || values.cols() != N) throw DomainError("grid values have wrong shape");
}

double GridField::norm() const { return values.norm() / N; }

Complex GridField::inner(const GridField& other) const {
  if (other.N != N) throw DomainError("grid sizes differ");
  return (values.array() * other.values.array().conjugate()).sum() / static_cast<double>(N * N);
}

void fft2(Eigen::MatrixXcd& m, bool inverse) {
  const int N = static_cast<int>(m.rows());
  if (m.cols() != N) throw DomainError("fft2 needs a square array");
  const int chunks = std::min(N, 4 * worker_count());
  auto pass = [&](bool columns) {
    parallel_for(chunks, [&](int c) {
      Eigen::FFT<double> fft;
      fft.SetFlag(Eigen::FFT<double>::Unscaled);
      std::vector<Complex> in(N), out(N);
      for (int j = c; j < N; j += chunks) {
        for (int i = 0; i < N; ++i) in[i] = columns ? m(i, j) : m(j, i);
        if (inverse)
          fft.inv(out, in);
        else
          fft.fwd(out, in);
        for (int i = 0; i < N; ++i) (columns ? m(i, j) : m(j, i)) = out[i];
      }
    });
  };
  pass(true);
  pass(false);
  m /= static_cast<double>(N);
}

// ---------------------------------------------------------------------------
// Symbols

void PartitionInfo::eval(const Eigen::Vector2d& x, double theta, std::vector<double>& out) const {
  out.resize(raw.size());
  double s = 0.0;
  for (std::size_t k = 0; k < raw.size(); ++k) {
    out[k] = raw[k](x, theta);
    s += kind == PartitionNorm::Sum ? out[k] : out[k] * out[k];
  }
  const double n = kind == PartitionNorm::Sum ? normalizer(s) : std::sqrt(normalizer(s));
  for (double& v : out) v /= n;
}

SymbolGrid SymbolGrid::from_function(const SymbolFunction& f, int nx, int ntheta, double h,
                                     double delta, std::vector<int> columns) {
  if (nx < 2 || ntheta < 4) throw DomainError("symbol grid too small");
  if (columns.empty()) {
    columns.resize(ntheta);
    for (int c = 0; c < ntheta; ++c) columns[c] = c;
  }
  const int rows = nx * nx, cols = static_cast<int>(columns.size());
  Eigen::MatrixXd v(rows, cols);
  parallel_for(rows, [&](int r) {
    const Eigen::Vector2d x(static_cast<double>(r / nx) / nx, static_cast<double>(r % nx) / nx);
    for (int c = 0; c < cols; ++c) v(r, c) = f(x, kTwoPi * columns[c] / ntheta);
  });
  SymbolGrid a = from_values(v, std::move(columns), nx, ntheta, h, delta);
  a.exact = f;
  return a;
}

SymbolGrid SymbolGrid::from_values(const Eigen::MatrixXd& values, std::vector<int> columns, int nx,
                                   int ntheta, double h, double delta) {
  if (values.rows() != nx * nx || values.cols() != static_cast<Eigen::Index>(columns.size()))
    throw DomainError("symbol values have wrong shape");
  SymbolGrid a;
  a.nx = nx;
  a.ntheta = ntheta;
  a.h = h;
  a.delta = delta;
  std::vector<int> keep;
  for (int c = 0; c < values.cols(); ++c)
    if (values.col(c).cwiseAbs().maxCoeff() > 0.0) keep.push_back(c);
  Eigen::MatrixXd v(values.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    v.col(k) = values.col(keep[k]);
    a.active.push_back(columns[keep[k]]);
  }
  if (keep.empty()) {
    a.x_factors.resize(nx * nx, 0);
    a.xi_factors.resize(0, 0);
    return a;
  }
  const Eigen::MatrixXd gram = v.transpose() * v;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const Eigen::VectorXd lambda = eig.eigenvalues().reverse().cwiseMax(0.0);
  const Eigen::MatrixXd V = eig.eigenvectors().rowwise().reverse();
  const double total = lambda.sum();
  int r = 0;
  double tail = total;
  while (r < lambda.size() && tail > 1e-12 * total) tail -= lambda(r++);
  r = std::max(r, 1);
  a.xi_factors = V.leftCols(r);
  a.x_factors = v * a.xi_factors;
  return a;
}

double SymbolGrid::theta(int column) const { return kTwoPi * column / ntheta; }

Eigen::MatrixXd SymbolGrid::values() const {
  if (active.empty()) return Eigen::MatrixXd::Zero(nx * nx, 0);
  return x_factors * xi_factors.transpose();
}

double SymbolGrid::operator()(const Eigen::Vector2d& x, double th) const {
  if (exact) return exact(x, th);
  const int c = column_of(th, ntheta);
  const auto it = std::lower_bound(active.begin(), active.end(), c);
  if (it == active.end() || *it != c) return 0.0;
  auto idx = [&](double t) {
    const long i = std::lround((t - std::floor(t)) * nx);
    return static_cast<int>(i % nx);
  };
  const int row = idx(x(0)) * nx + idx(x(1));
  return x_factors.row(row).dot(xi_factors.row(it - active.begin()));
}

double sdelta_constant(const SymbolGrid& a) {
  if (a.active.empty()) return 0.0;
  const Eigen::MatrixXd v = a.values();
  const int nx = a.nx, nt = a.ntheta;
  const double s = a.h > 0.0 ? std::pow(a.h, -a.delta) : 1.0;
  const double dx = 1.0 / nx, dt = kTwoPi / nt;
  std::vector<int> pos(nt, -1);
  for (std::size_t k = 0; k < a.active.size(); ++k) pos[a.active[k]] = static_cast<int>(k);
  auto at = [&](int i, int j, int c) {
    const int p = pos[((c % nt) + nt) % nt];
    if (p < 0) return 0.0;
    return v(((i % nx + nx) % nx) * nx + ((j % nx + nx) % nx), p);
  };
  const double sx = 1.0 / (dx * s), st = 1.0 / (dt * s);
  std::vector<double> best(nx, 0.0);
  parallel_for(nx, [&](int i) {
    double m = 0.0;
    for (int j = 0; j < nx; ++j) {
      for (int c : a.active) {
        for (int cc : {c - 1, c}) {
          const double f = at(i, j, cc);
          const double f1 = at(i + 1, j, cc), f2 = at(i, j + 1, cc), f3 = at(i, j, cc + 1);
          m = std::max({m, std::abs(f1 - f) * sx, std::abs(f2 - f) * sx, std::abs(f3 - f) * st});
          const double xx = at(i + 1, j, cc) - 2 * f + at(i - 1, j, cc);
          const double yy = at(i, j + 1, cc) - 2 * f + at(i, j - 1, cc);
          const double tt = at(i, j, cc + 1) - 2 * f + at(i, j, cc - 1);
          const double xy = at(i + 1, j + 1, cc) - f1 - f2 + f;
          const double xt = at(i + 1, j, cc + 1) - f1 - f3 + f;
          const double yt = at(i, j + 1, cc + 1) - f2 - f3 + f;
          m = std::max({m, std::abs(xx) * sx * sx, std::abs(yy) * sx * sx, std::abs(tt) * st * st,
                        std::abs(xy) * sx * sx, std::abs(xt) * sx * st, std::abs(yt) * sx * st});
        }
      }
    }
    best[i] = m;
  });
  return *std::max_element(best.begin(), best.end());
}

namespace {

/// Fourier coefficients c(kappa) of each position factor, f_r(x) = sum c_r(kappa) e^{2 pi i kappa x}.
/// Below the field size the Nyquist terms are split between +-nx/2 so that the
/// trigonometric interpolant stays real.
struct FactorSpectrum {
  std::vector<std::pair<int, double>> modes;  // (kappa, weight) per axis
  std::vector<int> source;                    // grid index behind each entry of `modes`
  std::vector<Eigen::MatrixXcd> coeffs;       // per rank, nx x nx
};

FactorSpectrum factor_spectrum(const SymbolGrid& a, int N) {
  const int nx = a.nx;
  if (nx > N) throw DomainError("symbol grid finer than the field grid");
  FactorSpectrum fs;
  for (int i = 0; i < nx; ++i) {
    const int kappa = frequency(i, nx);
    if (nx < N && i == nx / 2) {
      fs.modes.push_back({-nx / 2, 0.5});
      fs.source.push_back(i);
      fs.modes.push_back({nx / 2, 0.5});
      fs.source.push_back(i);
    } else {
      fs.modes.push_back({kappa, 1.0});
      fs.source.push_back(i);
    }
  }
  for (int r = 0; r < a.rank(); ++r) {
    Eigen::MatrixXcd c(nx, nx);
    for (int i = 0; i < nx; ++i)
      for (int j = 0; j < nx; ++j) c(i, j) = a.x_factors(i * nx + j, r);
    fft2(c, false);
    c /= static_cast<double>(nx);
    fs.coeffs.push_back(std::move(c));
  }
  return fs;
}

/// Position of the angle column of frequency k in a.active, or -1.
class AngleLookup {
 public:
  AngleLookup(const SymbolGrid& a) : ntheta_(a.ntheta), pos_(a.ntheta, -1) {
    for (std::size_t k = 0; k < a.active.size(); ++k) pos_[a.active[k]] = static_cast<int>(k);
  }
  int operator()(int k1, int k2) const {
    return pos_[column_of(std::atan2(static_cast<double>(k2), static_cast<double>(k1)), ntheta_)];
  }

 private:
  int ntheta_;
  std::vector<int> pos_;
};

/// Fourier coefficients of Op(a)u from those of u (indexed like fft2 output).
Eigen::MatrixXcd op_spectrum(const SymbolGrid& a, const Eigen::MatrixXcd& U) {
  if (a.rank() > kRankCap)
    throw RankCapError("symbol rank " + std::to_string(a.rank()) + " exceeds " +
                       std::to_string(kRankCap));
  const int N = static_cast<int>(U.rows());
  Eigen::MatrixXcd V = Eigen::MatrixXcd::Zero(N, N);
  if (a.rank() == 0) return V;
  const FactorSpectrum fs = factor_spectrum(a, N);
  const AngleLookup lookup(a);
  const int R = a.rank();
  auto g = [&](int pos, int r) { return pos < 0 ? 0.0 : a.xi_factors(pos, r); };

  const double umax = U.cwiseAbs().maxCoeff();
  std::vector<std::pair<int, int>> support;
  for (int j = 0; j < N && support.size() <= 64; ++j)
    for (int i = 0; i < N; ++i)
      if (std::abs(U(i, j)) > 1e-13 * umax) support.push_back({i, j});

  if (support.size() <= 64) {
    const int M = static_cast<int>(fs.modes.size());
    for (const auto& [i0, j0] : support) {
      const int p0 = lookup(frequency(i0, N), frequency(j0, N));
      const Complex u0 = 0.5 * U(i0, j0);
      for (int s = 0; s < M; ++s) {
        const int i = ((i0 + fs.modes[s].first) % N + N) % N;
        for (int t = 0; t < M; ++t) {
          const int j = ((j0 + fs.modes[t].first) % N + N) % N;
          const int p = lookup(frequency(i, N), frequency(j, N));
          const double w = fs.modes[s].second * fs.modes[t].second;
          Complex acc = 0.0;
          for (int r = 0; r < R; ++r)
            acc += fs.coeffs[r](fs.source[s], fs.source[t]) * (g(p0, r) + g(p, r));
          V(i, j) += u0 * w * acc;
        }
      }
    }
    return V;
  }

  // Dense: V = (1/2) sum_r [F(f_r F^-1(g_r U)) + g_r F(f_r u)].
  Eigen::MatrixXi pos(N, N);
  for (int j = 0; j < N; ++j)
    for (int i = 0; i < N; ++i) pos(i, j) = lookup(frequency(i, N), frequency(j, N));
  auto to_grid = [N](Eigen::MatrixXcd c) {
    fft2(c, true);
    return Eigen::MatrixXcd(c * static_cast<double>(N));
  };
  auto to_coeffs = [N](Eigen::MatrixXcd v) {
    fft2(v, false);
    return Eigen::MatrixXcd(v / static_cast<double>(N));
  };
  const Eigen::MatrixXcd u = to_grid(U);
  Eigen::MatrixXcd left = Eigen::MatrixXcd::Zero(N, N);
  for (int r = 0; r < R; ++r) {
    Eigen::MatrixXd gr(N, N);
    for (int j = 0; j < N; ++j)
      for (int i = 0; i < N; ++i) gr(i, j) = g(pos(i, j), r);
    Eigen::MatrixXcd cf = Eigen::MatrixXcd::Zero(N, N);
    const int M = static_cast<int>(fs.modes.size());
    for (int s = 0; s < M; ++s)
      for (int t = 0; t < M; ++t)
        cf((fs.modes[s].first % N + N) % N, (fs.modes[t].first % N + N) % N) +=
            fs.modes[s].second * fs.modes[t].second *
            fs.coeffs[r](fs.source[s], fs.source[t]);
    const Eigen::ArrayXXd f = to_grid(cf).real().array();
    left.array() += f * to_grid(U.cwiseProduct(gr.cast<Complex>())).array();
    V.array() += gr.array() * to_coeffs((u.array() * f).matrix()).array();
  }
  V = 0.5 * (V + to_coeffs(left));
  return V;
}

Eigen::MatrixXcd coefficients(const GridField& u) {
  Eigen::MatrixXcd U = u.values;
  fft2(U, false);
  return U / static_cast<double>(u.N);
}

}  // namespace

GridField weyl_quantize(const SymbolGrid& a, const GridField& u) {
  u.validate();
  GridField out = GridField::zeros(u.N, u.h);
  Eigen::MatrixXcd V = op_spectrum(a, coefficients(u));
  fft2(V, true);
  out.values = V * static_cast<double>(u.N);
  return out;
}

// ---------------------------------------------------------------------------
// Tube cutoffs and partitions

SymbolGrid tube_cutoff(const Submanifold& H, const Tube& tube, double h, double delta,
                       const CutoffOptions& opts) {
  if (H.manifold().kind != ManifoldKind::FlatTorus2)
    throw DomainError("tube cutoffs are built on the flat torus");
  const double R = tube.radius;
  if (!(R > 0.0)) throw DomainError("tube radius must be positive");
  if (h > 0.0 && R < 5.0 * std::pow(h, delta) * (1.0 - 1e-12))
    throw DomainError("tube radius below 5 h^delta");
  const Eigen::Vector2d x0 = tube.center.rho.x;
  const Eigen::Vector2d e = tube.center.rho.xi.normalized();
  const Eigen::Vector2d n(-e(1), e(0));
  const double theta0 = std::atan2(e(1), e(0));
  const double L = tube.tau + R, w = 0.25 * R, inner = 0.72 * R, outer = inner + w;
  const int K = static_cast<int>(std::ceil(L + R));

  // Axis directions use the lift chord |sin(pi y)| / pi across the flow, which is
  // periodic and needs no copies; other directions combine lattice copies.
  const bool axis = std::abs(e(0)) < 1e-12 || std::abs(e(1)) < 1e-12;
  SymbolFunction chi;
  if (axis) {
    chi = [=](const Eigen::Vector2d& x, double th) {
      const double q = angle_chord(th, theta0);
      if (q >= outer) return 0.0;
      const Eigen::Vector2d p = x - x0;
      const double ys = std::abs(std::sin(std::numbers::pi * p.dot(n))) / std::numbers::pi;
      const double d = std::hypot(ys, q);
      if (d >= outer) return 0.0;
      double t0 = p.dot(e);
      t0 -= std::round(t0);
      double miss = 1.0;
      for (int k = -K; k <= K; ++k) {
        const double t = std::abs(t0 + k);
        if (t < L) miss *= 1.0 - step_down(t, L - w, w);
      }
      return step_down(d, inner, w) * (1.0 - miss);
    };
  } else {
    chi = [=](const Eigen::Vector2d& x, double th) {
      const double q = angle_chord(th, theta0);
      if (q >= outer) return 0.0;
      Eigen::Vector2d p = x - x0;
      p(0) -= std::round(p(0));
      p(1) -= std::round(p(1));
      // Lattice copies combine as 1 - prod(1 - chi_copy), smooth where they overlap.
      double miss = 1.0;
      for (int i = -K; i <= K; ++i)
        for (int j = -K; j <= K; ++j) {
          const Eigen::Vector2d pp = p + Eigen::Vector2d(i, j);
          const double t = std::abs(pp.dot(e));
          if (t >= L) continue;
          const double y = std::abs(pp.dot(n));
          if (y >= outer) continue;
          const double d = std::hypot(y, q);
          if (d >= outer) continue;
          miss *= 1.0 - step_down(d, inner, w) * step_down(t, L - w, w);
        }
      return 1.0 - miss;
    };
  }

  std::vector<int> columns;
  for (int c = 0; c < opts.ntheta; ++c)
    if (angle_chord(kTwoPi * c / opts.ntheta, theta0) < outer) columns.push_back(c);
  SymbolGrid a = SymbolGrid::from_function(chi, opts.nx, opts.ntheta, h, delta, columns);
  a.feature = w;
  return a;
}

std::vector<SymbolGrid> normalize_partition(const std::vector<SymbolGrid>& family,
                                            PartitionNorm kind) {
  check_same_grids(family);
  const int n = static_cast<int>(family.size());
  std::vector<int> all(n);
  for (int j = 0; j < n; ++j) all[j] = j;
  std::vector<std::vector<int>> where;
  const std::vector<int> cols = union_columns(family, all, where);
  const int rows = family.front().nx * family.front().nx;
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(rows, static_cast<Eigen::Index>(cols.size()));
  for (int j = 0; j < n; ++j) {
    const Eigen::MatrixXd v = family[j].values();
    for (std::size_t k = 0; k < where[j].size(); ++k)
      S.col(where[j][k]) += kind == PartitionNorm::Sum ? Eigen::VectorXd(v.col(k))
                                                       : Eigen::VectorXd(v.col(k).array().square());
  }
  S = S.unaryExpr([kind](double s) {
    return kind == PartitionNorm::Sum ? normalizer(s) : std::sqrt(normalizer(s));
  });

  std::shared_ptr<PartitionInfo> info;
  if (std::all_of(family.begin(), family.end(), [](const SymbolGrid& a) { return bool(a.exact); })) {
    auto p = std::make_shared<PartitionInfo>();
    p->kind = kind;
    for (const auto& a : family) p->raw.push_back(a.exact);
    info = p;
  }

  std::vector<SymbolGrid> out;
  out.reserve(n);
  for (int j = 0; j < n; ++j) {
    const SymbolGrid& a = family[j];
    Eigen::MatrixXd v = a.values();
    for (std::size_t k = 0; k < where[j].size(); ++k) v.col(k).array() /= S.col(where[j][k]).array();
    SymbolGrid b = SymbolGrid::from_values(v, a.active, a.nx, a.ntheta, a.h, a.delta);
    b.feature = a.feature;
    b.tube_ref = a.tube_ref;
    b.window = a.window;
    if (info) {
      b.partition = info;
      b.member = j;
      b.exact = [info, j, kind, raw = a.exact](const Eigen::Vector2d& x, double th) {
        const double own = raw(x, th);
        if (own == 0.0) return 0.0;
        double s = 0.0;
        for (const auto& f : info->raw) {
          const double c = f(x, th);
          s += kind == PartitionNorm::Sum ? c : c * c;
        }
        return own / (kind == PartitionNorm::Sum ? normalizer(s) : std::sqrt(normalizer(s)));
      };
    }
    out.push_back(std::move(b));
  }
  return out;
}

SymbolGrid group_symbol(const std::vector<SymbolGrid>& family, const std::vector<int>& indices,
                        const std::optional<SymbolWindow>& window) {
  check_same_grids(family);
  if (indices.empty()) throw DomainError("empty group");
  for (int j : indices)
    if (j < 0 || j >= static_cast<int>(family.size())) throw DomainError("group index out of range");
  std::vector<std::vector<int>> where;
  const std::vector<int> cols = union_columns(family, indices, where);
  const SymbolGrid& f0 = family[indices.front()];
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(f0.nx * f0.nx, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t g = 0; g < indices.size(); ++g) {
    const Eigen::MatrixXd v = family[indices[g]].values();
    for (std::size_t k = 0; k < where[g].size(); ++k)
      Q.col(where[g][k]).array() += v.col(k).array().square();
  }
  SymbolGrid out =
      SymbolGrid::from_values(Q.cwiseSqrt(), cols, f0.nx, f0.ntheta, f0.h, f0.delta);
  out.window = window;
  out.feature = f0.feature;
  for (int j : indices) out.feature = std::min(out.feature, family[j].feature);

  const auto& info = f0.partition;
  const bool shared = info && std::all_of(indices.begin(), indices.end(), [&](int j) {
                        return family[j].partition == info;
                      });
  if (shared) {
    std::vector<int> members;
    for (int j : indices) members.push_back(family[j].member);
    out.exact = [info, members](const Eigen::Vector2d& x, double th) {
      thread_local std::vector<double> vals;
      info->eval(x, th, vals);
      double q = 0.0;
      for (int m : members) q += vals[m] * vals[m];
      return std::sqrt(q);
    };
  } else if (std::all_of(indices.begin(), indices.end(),
                         [&](int j) { return bool(family[j].exact); })) {
    std::vector<SymbolFunction> fs;
    for (int j : indices) fs.push_back(family[j].exact);
    out.exact = [fs](const Eigen::Vector2d& x, double th) {
      double q = 0.0;
      for (const auto& f : fs) {
        const double v = f(x, th);
        q += v * v;
      }
      return std::sqrt(q);
    };
  }
  return out;
}

void attach_window(SymbolGrid& chi, const WindowCheck& check, double t0, double T) {
  if (!check.certified) throw CertificateMissingError("window [t0, T] is not certified");
  chi.window = SymbolWindow{t0, T, check.direction};
}

// ---------------------------------------------------------------------------
// Time averages

double time_average_symbol(const SymbolGrid& chi, double t0, double T, int steps,
                           const TimeAverageOptions& opts) {
  if (!(t0 > 0.0) || !(T >= t0)) throw DomainError("time average needs 0 < t0 <= T");
  if (steps < 1) throw DomainError("time average needs steps >= 1");
  if (!chi.window || chi.window->t0 > t0 * (1 + 1e-12) || chi.window->T < T * (1 - 1e-12))
    throw CertificateMissingError("symbol has no certified window covering [t0, T]");
  const double sign = chi.window->direction == WindowDirection::Forward ? 1.0 : -1.0;
  auto average = [&](const Eigen::Vector3d& z) {
    const Eigen::Vector2d e(std::cos(z(2)), std::sin(z(2)));
    double acc = 0.0;
    for (int i = 0; i < steps; ++i) {
      const double s = sign * (i + 0.5) * T / steps;
      const double v = chi(Eigen::Vector2d(z(0), z(1)) + s * e, z(2));
      acc += v * v;
    }
    return acc / steps;
  };

  if (chi.active.empty()) return 0.0;
  constexpr int kMaxAngles = 16;
  std::vector<double> angles;
  const int na = static_cast<int>(chi.active.size());
  const int stride = std::max(1, (na + kMaxAngles - 1) / kMaxAngles);
  for (int k = 0; k < na; k += stride) angles.push_back(chi.theta(chi.active[k]));
  const int g = std::max(4, opts.grid);
  const int per_angle = g * g;
  const int total = per_angle * static_cast<int>(angles.size());
  std::vector<double> coarse(total);
  parallel_for(total, [&](int idx) {
    const int k = idx / per_angle, r = idx % per_angle;
    coarse[idx] = average(Eigen::Vector3d(static_cast<double>(r / g) / g,
                                          static_cast<double>(r % g) / g, angles[k]));
  });
  std::vector<int> order(total);
  for (int i = 0; i < total; ++i) order[i] = i;
  const int nseeds = std::min(std::max(1, opts.seeds), total);
  std::partial_sort(order.begin(), order.begin() + nseeds, order.end(),
                    [&](int a, int b) { return coarse[a] > coarse[b]; });

  const double dtheta = na > 1 ? std::abs(chi.theta(chi.active[std::min(stride, na - 1)]) -
                                          chi.theta(chi.active[0]))
                               : kTwoPi / chi.ntheta;
  const double floor = 1e-4 * (chi.feature > 0.0 ? std::min(chi.feature, 1.0 / g) : 1.0 / g);
  std::vector<double> best(nseeds);
  parallel_for(nseeds, [&](int sidx) {
    const int idx = order[sidx];
    const int k = idx / per_angle, r = idx % per_angle;
    Eigen::Vector3d z(static_cast<double>(r / g) / g, static_cast<double>(r % g) / g, angles[k]);
    double fz = coarse[idx];
    Eigen::Vector3d step(1.0 / g, 1.0 / g, std::max(dtheta, 1e-12));
    while (step(0) > floor) {
      bool moved = false;
      for (int d = 0; d < 3 && !moved; ++d)
        for (double sgn : {1.0, -1.0}) {
          Eigen::Vector3d y = z;
          y(d) += sgn * step(d);
          const double fy = average(y);
          if (fy > fz) {
            z = y, fz = fy, moved = true;
            break;
          }
        }
      if (!moved) step *= 0.5;
    }
    best[sidx] = fz;
  });
  const double sup = *std::max_element(best.begin(), best.end());
  const double bound = t0 / T;
  if (sup > bound * (1.0 + opts.tolerance))
    throw AssertionFailure("time average " + std::to_string(sup) + " exceeds t0/T = " +
                           std::to_string(bound));
  return sup;
}

// ---------------------------------------------------------------------------
// Masses and output

namespace {

MassReport masses(const GridField& u, const std::vector<SymbolGrid>& family,
                  const std::vector<int>& members, double fraction, const std::string& label) {
  MassReport r;
  r.group = label;
  r.tubes = members;
  u.validate();
  const Eigen::MatrixXcd U = coefficients(u);
  r.norm2 = U.squaredNorm();
  for (int j : members) {
    if (j < 0 || j >= static_cast<int>(family.size())) throw DomainError("tube index out of range");
    const double m2 = op_spectrum(family[j], U).squaredNorm();
    r.per_tube.push_back(m2);
    r.total += m2;
  }
  r.ratio = r.norm2 > 0.0 ? r.total / (fraction * r.norm2) : 0.0;
  return r;
}

}  // namespace

MassReport localized_mass(const GridField& u, const std::vector<SymbolGrid>& family,
                          const PartitionGroup& group, const std::string& label) {
  if (group.members.empty()) throw DomainError("empty group");
  if (!(group.t > 0.0) || !(group.T >= group.t))
    throw CertificateMissingError("group has no certified window");
  for (int j : group.members)
    if (j >= 0 && j < static_cast<int>(family.size()) && !family[j].window)
      throw CertificateMissingError("tube " + std::to_string(j) + " has no certified window");
  return masses(u, family, group.members, group.t / group.T, label);
}

MassReport cover_mass(const GridField& u, const std::vector<SymbolGrid>& family) {
  std::vector<int> all(family.size());
  for (std::size_t j = 0; j < all.size(); ++j) all[j] = static_cast<int>(j);
  return masses(u, family, all, 1.0, "all");
}

void write_mass_csv_header(std::ostream& out) { out << "tube_index,group,mass,ratio\n"; }

void write_mass_csv_rows(std::ostream& out, const MassReport& r) {
  const auto old = out.precision(17);
  const double denom = r.total > 0.0 ? r.total / r.ratio : 0.0;
  for (std::size_t k = 0; k < r.tubes.size(); ++k)
    out << r.tubes[k] << ',' << r.group << ',' << r.per_tube[k] << ','
        << (denom > 0.0 ? r.per_tube[k] / denom : 0.0) << '\n';
  out << "total," << r.group << ',' << r.total << ',' << r.ratio << '\n';
  out.precision(old);
}

namespace {
constexpr char kMagic[8] = {'E', 'I', 'G', 'A', 'V', 'G', 'G', 'F'};
}

void write_grid(std::ostream& out, const GridField& u) {
  u.validate();
  char header[32] = {};
  std::memcpy(header, kMagic, 8);
  const std::uint64_t n = static_cast<std::uint64_t>(u.N);
  std::memcpy(header + 8, &n, 8);
  std::memcpy(header + 16, &u.h, 8);
  out.write(header, 32);
  std::vector<double> row(2 * static_cast<std::size_t>(u.N));
  for (int a = 0; a < u.N; ++a) {
    for (int b = 0; b < u.N; ++b) {
      row[2 * b] = u.values(a, b).real();
      row[2 * b + 1] = u.values(a, b).imag();
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(double)));
  }
  if (!out) throw Error("failed to write grid");
}

GridField read_grid(std::istream& in) {
  char header[32];
  if (!in.read(header, 32) || std::memcmp(header, kMagic, 8) != 0)
    throw Error("not a grid dump");
  std::uint64_t n = 0;
  double h = 0.0;
  std::memcpy(&n, header + 8, 8);
  std::memcpy(&h, header + 16, 8);
  if (n < 8 || n > (1u << 16)) throw Error("grid dump has a bad size");
  GridField u;
  u.N = static_cast<int>(n);
  u.h = h;
  u.values.resize(u.N, u.N);
  std::vector<double> row(2 * n);
  for (int a = 0; a < u.N; ++a) {
    if (!in.read(reinterpret_cast<char*>(row.data()),
                 static_cast<std::streamsize>(row.size() * sizeof(double))))
      throw Error("grid dump is truncated");
    for (int b = 0; b < u.N; ++b) u.values(a, b) = Complex(row[2 * b], row[2 * b + 1]);
  }
  u.validate();
  return u;
}

}  // namespace eigavg
