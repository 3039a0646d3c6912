#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numbers>
#include <random>
#include <sstream>

#include "eigavg/errors.hpp"
#include "eigavg/quantize.hpp"

using namespace eigavg;

namespace {

constexpr double kPi = std::numbers::pi;

GridField random_field(int N, double h, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  GridField u = GridField::zeros(N, h);
  for (int j = 0; j < N; ++j)
    for (int i = 0; i < N; ++i) u.values(i, j) = Complex(g(rng), g(rng));
  return u;
}

// Naive DFT, unitary like fft2.
Eigen::MatrixXcd naive_dft(const Eigen::MatrixXcd& v) {
  const int N = static_cast<int>(v.rows());
  Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(N, N);
  for (int k1 = 0; k1 < N; ++k1)
    for (int k2 = 0; k2 < N; ++k2)
      for (int a = 0; a < N; ++a)
        for (int b = 0; b < N; ++b)
          out(k1, k2) += v(a, b) * std::polar(1.0, -2 * kPi * double(k1 * a + k2 * b) / N);
  return out / double(N);
}

int freq(int a, int N) { return a < N / 2 ? a : a - N; }

Submanifold horizontal() {
  return Submanifold::closed_geodesic(ManifoldModel::flat_torus(),
                                      {Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0), 0}, 1.0);
}

Tube bare_tube(const Eigen::Vector2d& x, double theta, double tau, double R) {
  Tube t;
  t.center.rho = {x, Eigen::Vector2d(std::cos(theta), std::sin(theta)), 0};
  t.tau = tau;
  t.radius = R;
  return t;
}

// f(x) g(theta) with f a trigonometric polynomial given by its coefficients.
struct TrigSymbol {
  std::vector<std::pair<Eigen::Vector2i, double>> f;
  std::function<double(double)> g;
  double fx(const Eigen::Vector2d& x) const {
    double s = 0.0;
    for (const auto& [k, c] : f) s += c * std::cos(2 * kPi * (k(0) * x(0) + k(1) * x(1)));
    return s;
  }
};

// Op(a) e_m = 1/2 sum_kappa c(kappa) (g(theta_m) + g(theta_{m+kappa})) e_{m+kappa}, with
// the nearest angle column applied to g.
GridField oracle_single(const TrigSymbol& a, int ntheta, const Eigen::Vector2i& m, int N,
                        double h) {
  auto gq = [&](const Eigen::Vector2i& k) {
    double th = std::atan2(double(k(1)), double(k(0)));
    if (th < 0) th += 2 * kPi;
    const long c = std::lround(th / (2 * kPi) * ntheta) % ntheta;
    return a.g(2 * kPi * c / ntheta);
  };
  std::vector<std::pair<Eigen::Vector2i, Complex>> terms;
  for (const auto& [k, c] : a.f)
    for (int s : {1, -1}) {
      const Eigen::Vector2i mk = m + s * k;
      terms.push_back({mk, 0.25 * c * (gq(m) + gq(mk))});
    }
  return GridField::from_modes(N, h, terms);
}

SymbolGrid trig_grid(const TrigSymbol& a, int nx, int ntheta, double h) {
  return SymbolGrid::from_function(
      [a](const Eigen::Vector2d& x, double th) { return a.fx(x) * a.g(th); }, nx, ntheta, h, 0.0);
}

}  // namespace

TEST_CASE("fft2 is unitary and matches the naive transform") {
  const GridField u = random_field(16, 0.08, 1);
  Eigen::MatrixXcd v = u.values;
  fft2(v, false);
  CHECK((v - naive_dft(u.values)).norm() < 1e-12 * v.norm());
  CHECK(std::abs(v.norm() - u.values.norm()) < 1e-12 * v.norm());
  fft2(v, true);
  CHECK((v - u.values).norm() < 1e-12 * v.norm());
}

TEST_CASE("grid fields validate size and resolution") {
  CHECK_THROWS_AS(GridField::zeros(48, 0.1), DomainError);
  CHECK_THROWS_AS(GridField::zeros(64, 0.01), DomainError);  // 4 points per wavelength
  CHECK_NOTHROW(GridField::zeros(2048, 1.0 / (2 * kPi * 256)));
  const GridField e = GridField::from_modes(32, 0.05, {{Eigen::Vector2i(3, -2), 1.0}});
  CHECK(std::abs(e.norm() - 1.0) < 1e-14);
  CHECK(std::abs(e.values(5, 7) - std::polar(1.0, 2 * kPi * (3 * 5 - 2 * 7) / 32.0)) < 1e-13);
}

TEST_CASE("constant and position-only symbols") {
  const int N = 64;
  const double h = 0.02;
  const GridField u = random_field(N, h, 2);

  const SymbolGrid one = SymbolGrid::from_function(
      [](const Eigen::Vector2d&, double) { return 1.0; }, 16, 32, h, 0.0);
  CHECK(one.rank() == 1);
  CHECK((weyl_quantize(one, u).values - u.values).norm() < 1e-10 * u.values.norm());

  // Sampled on the field grid the product is exact for any function of x.
  auto ax = [](const Eigen::Vector2d& x, double) {
    return std::exp(std::sin(2 * kPi * x(0))) / (1.5 + std::cos(2 * kPi * x(1)));
  };
  const SymbolGrid a = SymbolGrid::from_function(ax, N, 16, h, 0.0);
  const GridField v = weyl_quantize(a, u);
  double err = 0.0;
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      err = std::max(err, std::abs(v.values(i, j) -
                                   ax(Eigen::Vector2d(double(i) / N, double(j) / N), 0) *
                                       u.values(i, j)));
  CHECK(err < 1e-10);

  // A coarse grid interpolates trigonometric polynomials of low degree exactly.
  auto tx = [](const Eigen::Vector2d& x, double) {
    return 2.0 + std::cos(2 * kPi * (3 * x(0) - x(1))) + 0.5 * std::sin(2 * kPi * 5 * x(1));
  };
  const SymbolGrid b = SymbolGrid::from_function(tx, 16, 16, h, 0.0);
  const GridField w = weyl_quantize(b, u);
  err = 0.0;
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      err = std::max(err, std::abs(w.values(i, j) -
                                   tx(Eigen::Vector2d(double(i) / N, double(j) / N), 0) *
                                       u.values(i, j)));
  CHECK(err < 1e-10);
}

TEST_CASE("angle-only symbols are Fourier multipliers") {
  const int N = 16, ntheta = 64;
  const double h = 0.08;
  const GridField u = random_field(N, h, 3);
  auto g = [](double th) { return 1.0 + 0.3 * std::cos(th) + 0.2 * std::sin(3 * th); };
  const SymbolGrid a = SymbolGrid::from_function(
      [g](const Eigen::Vector2d&, double th) { return g(th); }, 8, ntheta, h, 0.0);
  const Eigen::MatrixXcd got = naive_dft(weyl_quantize(a, u).values);
  const Eigen::MatrixXcd U = naive_dft(u.values);
  double err = 0.0;
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) {
      double th = std::atan2(double(freq(j, N)), double(freq(i, N)));
      if (th < 0) th += 2 * kPi;
      const long c = std::lround(th / (2 * kPi) * ntheta) % ntheta;
      err = std::max(err, std::abs(got(i, j) - g(2 * kPi * c / ntheta) * U(i, j)));
    }
  CHECK(err < 1e-10);
}

TEST_CASE("sparse and dense paths agree with the mode-by-mode formula") {
  const int N = 64, ntheta = 128;
  const double h = 0.02;
  TrigSymbol a{{{Eigen::Vector2i(0, 0), 1.0}, {Eigen::Vector2i(2, 1), 0.4},
                {Eigen::Vector2i(-1, 3), 0.25}},
               [](double th) { return 1.0 + 0.5 * std::cos(th - 0.3); }};
  const SymbolGrid s = trig_grid(a, 16, ntheta, h);

  const Eigen::Vector2i m(5, -3);
  const GridField single = GridField::from_modes(N, h, {{m, 1.0}});
  const GridField expect = oracle_single(a, ntheta, m, N, h);
  CHECK((weyl_quantize(s, single).values - expect.values).norm() < 1e-10 * N);

  // 100 modes forces the FFT path; compare with the superposition of single-mode oracles.
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> k(-12, 12);
  std::vector<std::pair<Eigen::Vector2i, Complex>> terms;
  GridField sum = GridField::zeros(N, h);
  for (int t = 0; t < 100; ++t) {
    const Eigen::Vector2i mt(k(rng), k(rng));
    const Complex c(std::cos(t), std::sin(2 * t));
    terms.push_back({mt, c});
    sum.values += c * oracle_single(a, ntheta, mt, N, h).values;
  }
  const GridField many = GridField::from_modes(N, h, terms);
  CHECK((weyl_quantize(s, many).values - sum.values).norm() < 1e-9 * sum.values.norm());
}

TEST_CASE("quantization is self-adjoint and pairs with defect measures") {
  const int N = 64;
  const double h = 0.02;
  auto f = [](const Eigen::Vector2d& x, double th) {
    return std::exp(std::cos(2 * kPi * x(0)) * std::sin(th)) +
           std::cos(2 * kPi * (x(0) + x(1))) * std::cos(2 * th);
  };
  const SymbolGrid a = SymbolGrid::from_function(f, 32, 128, h, 0.0);
  CHECK(a.rank() <= kRankCap);
  const GridField u = random_field(N, h, 5), v = random_field(N, h, 6);
  const Complex lhs = weyl_quantize(a, u).inner(v), rhs = u.inner(weyl_quantize(a, v));
  CHECK(std::abs(lhs - rhs) < 1e-8 * u.norm() * v.norm());

  // <Op(a) e_m, e_m> = int a(x, theta_m) dx, theta_m on the angle grid.
  const GridField e = GridField::from_modes(N, h, {{Eigen::Vector2i(0, 8), 1.0}});
  double mean = 0.0;
  for (int i = 0; i < 32; ++i)
    for (int j = 0; j < 32; ++j) mean += f(Eigen::Vector2d(i / 32.0, j / 32.0), kPi / 2);
  mean /= 32.0 * 32.0;
  CHECK(std::abs(weyl_quantize(a, e).inner(e) - mean) < 1e-6);
}

TEST_CASE("rank cap") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> U(-1, 1);
  Eigen::MatrixXd v(64, 40);
  for (int i = 0; i < v.rows(); ++i)
    for (int j = 0; j < v.cols(); ++j) v(i, j) = U(rng);
  std::vector<int> cols(40);
  for (int c = 0; c < 40; ++c) cols[c] = c;
  const SymbolGrid a = SymbolGrid::from_values(v, cols, 8, 64, 0.05, 0.0);
  CHECK(a.rank() == 40);
  CHECK_THROWS_AS(weyl_quantize(a, random_field(32, 0.05, 8)), RankCapError);
}

TEST_CASE("tube cutoffs obey the S_delta bounds with margin") {
  const Submanifold H = horizontal();
  for (auto [h, delta] : {std::pair{1e-3, 0.3}, {1e-3, 0.2}, {1e-2, 0.3}, {1e-3, 0.25}}) {
    const double R = 5 * std::pow(h, delta);
    const SymbolGrid chi =
        tube_cutoff(H, bare_tube(Eigen::Vector2d(0.3, 0.0), kPi / 2, 0.1, R), h, delta, {64, 256});
    const double C = sdelta_constant(chi);
    INFO("h = " << h << " delta = " << delta << " C = " << C);
    CHECK(C > 1.0);
    CHECK(2 * C <= kCutoffSeminorm);
    CHECK(chi.rank() <= kRankCap);
  }
  CHECK_THROWS_AS(tube_cutoff(H, bare_tube(Eigen::Vector2d(0, 0), kPi / 2, 0.1, 0.3), 1e-3, 0.3),
                  DomainError);
  CHECK_THROWS_AS(tube_cutoff(Submanifold::latitude_circle(1.0),
                              bare_tube(Eigen::Vector2d(0, 0), 0.0, 0.1, 1.0), 1e-3, 0.3),
                  DomainError);
}

TEST_CASE("tube cutoffs vanish outside the R-fattened skeleton") {
  const Submanifold H = horizontal();
  const ManifoldModel& m = H.manifold();
  const auto samples = sample_conormal(H, 200);
  const double R = 0.135;
  const Tube tube = make_tube(H, samples[37], 0.05, R);
  const SymbolGrid chi = tube_cutoff(H, tube, 1.0 / (2 * kPi * 256), 0.49, {64, 256});

  double gap = 0.0;
  for (std::size_t i = 0; i < tube.skeleton.size(); ++i) {
    double nearest = 1e9;
    for (std::size_t j = 0; j < tube.skeleton.size(); ++j)
      if (j != i) nearest = std::min(nearest, (tube.skeleton[i] - tube.skeleton[j]).norm());
    gap = std::max(gap, nearest);
  }
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> U(-1, 1);
  const double th0 = std::atan2(tube.center.rho.xi(1), tube.center.rho.xi(0));
  int outside = 0, inside_plateau = 0;
  for (int k = 0; k < 4000; ++k) {
    const Eigen::Vector2d x = tube.center.rho.x + Eigen::Vector2d(0.4 * U(rng), 0.4 * U(rng));
    const double th = th0 + 0.4 * U(rng);
    const PhaseVector p = phase_embed(m, {x, Eigen::Vector2d(std::cos(th), std::sin(th)), 0});
    double d = 1e9;
    for (const auto& s : tube.skeleton) d = std::min(d, (p - s).norm());
    const double v = chi(x, th);
    if (d - 0.5 * gap > R) {
      ++outside;
      CHECK(v < 1e-8);
    }
    if (d < 0.5 * R && v == 1.0) ++inside_plateau;
  }
  CHECK(outside > 1000);
  CHECK(inside_plateau > 0);
}

TEST_CASE("normalized partitions sum to one on the thickened flow-out") {
  const Submanifold H = horizontal();
  const double h = 1.0 / (2 * kPi * 256), delta = 0.49, tau = 0.05;
  CoverOptions co;
  co.tau = tau;
  co.R = 0.135;
  co.h = h;
  co.delta = delta;
  const TubeCover cover = build_cover(H, sample_conormal(H, 400), co);
  std::vector<SymbolGrid> raw;
  for (const auto& t : cover.tubes) raw.push_back(tube_cutoff(H, t, h, delta, {32, 256}));
  const auto sum = normalize_partition(raw, PartitionNorm::Sum);
  const auto sq = normalize_partition(raw, PartitionNorm::SumOfSquares);

  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> U(0, 1);
  const double hd = std::pow(h, delta);
  double worst_sum = 0.0, worst_sq = 0.0;
  for (int k = 0; k < 300; ++k) {
    const int branch = U(rng) < 0.5 ? 1 : -1;
    const CotangentPoint q = H.conormal_at(U(rng), branch);
    const double t = tau * (2 * U(rng) - 1);
    // Lifted displacement of size < h^delta, split between position and angle.
    const double a = 2 * kPi * U(rng), r = 0.99 * hd * U(rng);
    const Eigen::Vector2d x = q.x + t * q.xi + 0.7 * r * Eigen::Vector2d(std::cos(a), std::sin(a));
    const double th = std::atan2(q.xi(1), q.xi(0)) + 0.7 * r * (U(rng) < 0.5 ? 1 : -1);
    double s = 0.0, s2 = 0.0, rawsum = 0.0;
    for (std::size_t j = 0; j < raw.size(); ++j) {
      s += sum[j](x, th);
      s2 += std::pow(sq[j](x, th), 2);
      rawsum += raw[j](x, th);
    }
    CHECK(rawsum >= 1.0);
    worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    worst_sq = std::max(worst_sq, std::abs(s2 - 1.0));
  }
  CHECK(worst_sum < 1e-6);
  CHECK(worst_sq < 1e-6);
}

TEST_CASE("time averages over a certified window") {
  const ManifoldModel flat = ManifoldModel::flat_torus();
  const Eigen::Vector2d x0(0.31, 0.47);
  const Submanifold H = Submanifold::point(flat, {x0, 0});
  const double th0 = std::atan(std::numbers::phi);
  ConormalSample c;
  c.rho = {x0, Eigen::Vector2d(std::cos(th0), std::sin(th0)), 0};
  c.param = th0;
  c.weight = 1.0;
  const Tube tube = make_tube(H, c, 0.05, 0.02);
  const WindowCheck wc = check_window(H, {tube}, {0}, 0.2, 2.0);
  REQUIRE(wc.certified);

  SymbolGrid chi = tube_cutoff(H, tube, 1e-9, 0.3, {64, 1024});
  CHECK_THROWS_AS(time_average_symbol(chi, 0.2, 2.0, 800), CertificateMissingError);
  attach_window(chi, wc, 0.2, 2.0);
  const double avg = time_average_symbol(chi, 0.2, 2.0, 800);
  // The centre orbit crosses the plateau once: about (2 tau + 1.6 R) / T.
  CHECK(avg > 0.05);
  CHECK(avg <= 0.1 * (1 + 1e-2));
  CHECK_THROWS_AS(time_average_symbol(chi, 0.1, 2.0, 800), CertificateMissingError);

  // A closed orbit returns every unit of time; a forged window is caught.
  const Submanifold L = horizontal();
  SymbolGrid loop = tube_cutoff(L, bare_tube(Eigen::Vector2d(0.5, 0), kPi / 2, 0.05, 0.02), 1e-9,
                                0.3, {64, 1024});
  loop.window = SymbolWindow{0.2, 2.0, WindowDirection::Forward};
  CHECK_THROWS_AS(time_average_symbol(loop, 0.2, 2.0, 800), AssertionFailure);
}

TEST_CASE("masses of modes inside and outside the tubes") {
  const Submanifold H = horizontal();
  const int N = 256;
  const double h = 1.0 / (2 * kPi * 32);
  SymbolGrid chi = tube_cutoff(H, bare_tube(Eigen::Vector2d(0.5, 0), kPi / 2, 0.1, 0.38), h,
                               0.49, {64, 512});
  const std::vector<SymbolGrid> family{chi};

  const GridField across = GridField::from_modes(N, h, {{Eigen::Vector2i(32, 0), 1.0}});
  CHECK(cover_mass(across, family).total <= 1e-6);

  // Along the tube: mass is about the measure of its plateau band, within O(h).
  const GridField along = GridField::from_modes(N, h, {{Eigen::Vector2i(0, 32), 1.0}});
  double band = 0.0;
  for (int i = 0; i < 512; ++i)
    for (int j = 0; j < 512; ++j) band += std::pow(chi(Eigen::Vector2d(i / 512.0, j / 512.0), kPi / 2), 2);
  band /= 512.0 * 512.0;
  const MassReport r = cover_mass(along, family);
  CHECK(std::abs(r.total - band) < 0.05 * band);
  CHECK(std::abs(r.norm2 - 1.0) < 1e-12);

  PartitionGroup g;
  g.members = {0};
  g.t = 0.5;
  g.T = 1.0;
  CHECK_THROWS_AS(localized_mass(along, family, g), CertificateMissingError);
  std::vector<SymbolGrid> certified = family;
  certified[0].window = SymbolWindow{0.5, 1.0, WindowDirection::Forward};
  const MassReport lm = localized_mass(along, certified, g, "G0");
  CHECK(std::abs(lm.ratio - 2 * r.total) < 1e-12);

  std::ostringstream csv;
  write_mass_csv_header(csv);
  write_mass_csv_rows(csv, lm);
  std::istringstream lines(csv.str());
  std::string line;
  std::getline(lines, line);
  CHECK(line == "tube_index,group,mass,ratio");
  std::getline(lines, line);
  CHECK(line.rfind("0,G0,", 0) == 0);
  std::getline(lines, line);
  CHECK(line.rfind("total,G0,", 0) == 0);
}

TEST_CASE("grid dump round trip") {
  const GridField u = random_field(32, 0.05, 11);
  std::stringstream buf;
  write_grid(buf, u);
  const std::string bytes = buf.str();
  REQUIRE(bytes.size() == 32 + 32 * 32 * 16);
  CHECK(bytes.substr(0, 8) == "EIGAVGGF");
  double first[2];
  std::memcpy(first, bytes.data() + 32 + 16, 16);  // row 0, column 1
  CHECK(first[0] == u.values(0, 1).real());
  CHECK(first[1] == u.values(0, 1).imag());
  const GridField v = read_grid(buf);
  CHECK(v.N == 32);
  CHECK(v.h == 0.05);
  CHECK(v.values == u.values);
  std::istringstream junk(std::string(40, 'x'));
  CHECK_THROWS_AS(read_grid(junk), Error);
}

TEST_CASE("quantization is linear and bounded by the sup of the symbol") {
  const int N = 512;
  const double h = 1.0 / (2 * kPi * 64);
  const Submanifold H = horizontal();
  for (double delta : {0.3, 0.45}) {
    const double R = 5 * std::pow(h, delta);
    const SymbolGrid chi =
        tube_cutoff(H, bare_tube(Eigen::Vector2d(0.4, 0.1), kPi / 2, 0.05, R), h, delta, {128, 512});
    const double amax = chi.values().cwiseAbs().maxCoeff();
    for (unsigned seed : {12u, 13u}) {
      const GridField u = random_field(N, h, seed);
      const double ratio = weyl_quantize(chi, u).norm() / u.norm();
      INFO("delta = " << delta << " ratio = " << ratio);
      CHECK(ratio <= amax + 0.5 * kCutoffSeminorm * std::pow(h, 1 - 2 * delta));
    }
    const GridField e = GridField::from_modes(N, h, {{Eigen::Vector2i(0, 64), 1.0}});
    CHECK(weyl_quantize(chi, e).norm() <= amax + 0.5 * kCutoffSeminorm * std::pow(h, 1 - 2 * delta));
  }

  const int M = 64;
  const double hm = 0.02;
  auto fa = [](const Eigen::Vector2d& x, double th) { return std::cos(2 * kPi * x(0)) * std::sin(th); };
  auto fb = [](const Eigen::Vector2d& x, double th) { return 1.0 + std::sin(2 * kPi * x(1)) * std::cos(2 * th); };
  const SymbolGrid a = SymbolGrid::from_function(fa, 16, 64, hm, 0.0);
  const SymbolGrid b = SymbolGrid::from_function(fb, 16, 64, hm, 0.0);
  const SymbolGrid ab = SymbolGrid::from_function(
      [&](const Eigen::Vector2d& x, double th) { return 2 * fa(x, th) - 3 * fb(x, th); }, 16, 64,
      hm, 0.0);
  const GridField u = random_field(M, hm, 14), v = random_field(M, hm, 15);
  GridField uv = u;
  uv.values = u.values - Complex(0, 2) * v.values;
  const Eigen::MatrixXcd lin_sym =
      2 * weyl_quantize(a, u).values - 3 * weyl_quantize(b, u).values;
  CHECK((weyl_quantize(ab, u).values - lin_sym).norm() < 1e-10 * lin_sym.norm());
  const Eigen::MatrixXcd lin_field =
      weyl_quantize(b, u).values - Complex(0, 2) * weyl_quantize(b, v).values;
  CHECK((weyl_quantize(b, uv).values - lin_field).norm() < 1e-10 * lin_field.norm());
}

TEST_CASE("time averages refuse invariant symbols and are trivial at T = t0") {
  SymbolGrid invariant = SymbolGrid::from_function(
      [](const Eigen::Vector2d&, double) { return 1.0; }, 8, 32, 1e-3, 0.3);
  CHECK_THROWS_AS(time_average_symbol(invariant, 0.2, 2.0, 50), CertificateMissingError);

  const Submanifold L = horizontal();
  SymbolGrid chi = tube_cutoff(L, bare_tube(Eigen::Vector2d(0.5, 0), kPi / 2, 0.05, 0.05), 1e-9,
                               0.3, {64, 512});
  chi.window = SymbolWindow{0.3, 0.3, WindowDirection::Forward};
  const double avg = time_average_symbol(chi, 0.3, 0.3, 200);
  CHECK(avg <= 1.0);
  CHECK(avg > 0.5);  // plateau crossing of about 0.19 in 0.3
}
