#include "eigavg/catmap.hpp"

#include <algorithm>
#include <cmath>

#include "eigavg/parallel.hpp"

namespace eigavg {

namespace {

std::int64_t mod(std::int64_t a, std::int64_t n) {
  const std::int64_t r = a % n;
  return r < 0 ? r + n : r;
}

std::uint64_t cells_hash(std::vector<int> cells) {
  std::sort(cells.begin(), cells.end());
  return fnv1a(cells.data(), cells.size() * sizeof(int));
}

}  // namespace

HyperbolicToyMap::HyperbolicToyMap() : HyperbolicToyMap((Eigen::Matrix2i() << 2, 1, 1, 1).finished()) {}

HyperbolicToyMap::HyperbolicToyMap(const Eigen::Matrix2i& matrix) : M_(matrix) {
  const int det = M_(0, 0) * M_(1, 1) - M_(0, 1) * M_(1, 0);
  const int tr = M_.trace();
  if (det != 1 && det != -1) throw NonHyperbolicError("toy map: determinant must be +-1");
  if (std::abs(tr) <= 2) throw NonHyperbolicError("toy map: |trace| must exceed 2");
  Eigen::EigenSolver<Eigen::Matrix2d> es(M_.cast<double>());
  const Eigen::Vector2d ev = es.eigenvalues().real();
  const int big = std::abs(ev(0)) > std::abs(ev(1)) ? 0 : 1;
  lambda_ = std::abs(ev(big));
  eu_ = es.eigenvectors().real().col(big).normalized();
  es_ = es.eigenvectors().real().col(1 - big).normalized();
}

Eigen::Matrix<std::int64_t, 2, 2> HyperbolicToyMap::power_mod(int s, std::int64_t modulus) const {
  if (s < 0) throw DomainError("power_mod: negative exponent");
  using M64 = Eigen::Matrix<std::int64_t, 2, 2>;
  M64 result = M64::Identity(), base = M_.cast<std::int64_t>();
  auto reduce = [&](M64 a) {
    for (int i = 0; i < 4; ++i) a(i) = mod(a(i), modulus);
    return a;
  };
  base = reduce(base);
  for (int e = s; e > 0; e >>= 1) {
    if (e & 1) result = reduce(result * base);
    base = reduce(base * base);
  }
  return reduce(result);
}

double max_expansion_rate(const HyperbolicToyMap& map) { return std::log(map.expansion()); }

TorusRectangle stable_rectangle(const HyperbolicToyMap& map, double length, double width,
                                const Eigen::Vector2d& center) {
  return {center, map.stable_direction(), length, width};
}

std::vector<int> grid_cells(const TorusRectangle& A, int N) {
  const Eigen::Vector2d d = A.direction.normalized();
  const Eigen::Vector2d n(-d(1), d(0));
  std::vector<int> cells;
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b) {
      const Eigen::Vector2d p(wrap_half(double(a) / N - A.center(0)),
                              wrap_half(double(b) / N - A.center(1)));
      if (std::abs(p.dot(d)) <= 0.5 * A.length && std::abs(p.dot(n)) <= 0.5 * A.width)
        cells.push_back(a * N + b);
    }
  return cells;
}

ContractionResult contraction_partition(const HyperbolicToyMap& map, const TorusRectangle& A0,
                                        int t0, int T, double eps,
                                        const ContractionOptions& opts) {
  if (!(eps > 0.0 && eps <= 1.0)) throw DomainError("contraction_partition: eps must lie in (0,1]");
  if (t0 < 1 || T < t0) throw DomainError("contraction_partition: need 1 <= t0 <= T");
  const int N = opts.grid;
  if (N < 2 || N > 46340) throw DomainError("contraction_partition: grid size out of range");

  // The rectangle's extent along its own axis must shrink under the map.
  {
    const Eigen::Vector2d d = A0.direction.normalized();
    const Eigen::Vector2d n(-d(1), d(0));
    const Eigen::Matrix2d M = map.matrix().cast<double>();
    Eigen::Matrix2d corners;
    corners << 0.5 * A0.length * d + 0.5 * A0.width * n, 0.5 * A0.length * d - 0.5 * A0.width * n;
    auto extent = [&](const Eigen::Matrix2d& c) {
      return std::max(std::abs(c.col(0).dot(d)), std::abs(c.col(1).dot(d)));
    };
    double prev = extent(corners);
    for (int s = 1; s <= T && prev > 1.0 / N; ++s) {
      corners = M * corners;
      const double cur = extent(corners);
      if (!(prev >= opts.shrink * cur))
        throw NonContractingError("contraction_partition: extent shrinks by " +
                                  std::to_string(prev / cur) + " at step " + std::to_string(s));
      prev = cur;
    }
  }

  ContractionResult res;
  res.grid = N;
  std::vector<int> A = grid_cells(A0, N);
  res.size_A0 = static_cast<int>(A.size());
  if (A.empty()) throw DomainError("contraction_partition: A0 contains no grid cells");
  const double cell = 1.0 / (double(N) * N);

  PartitionCertificate& cert = res.certificate;
  cert.mechanism = "contraction";
  cert.h = opts.h;
  cert.delta = opts.delta;
  cert.alpha = opts.alpha;
  cert.R = opts.h > 0.0 ? 5.0 * std::pow(opts.h, opts.delta) : 0.0;
  cert.sigma_total = A.size() * cell;
  cert.skeleton_hashes = {cells_hash(A)};
  cert.notes = {"members are grid cells a*N+b of the toy-map grid",
                "grid N = " + std::to_string(N)};

  const Eigen::Matrix2i M = map.matrix();
  std::vector<char> inA(std::size_t(N) * N, 0);
  for (int Tl = T;; Tl /= 2) {
    for (int c : A) inA[c] = 1;
    // Forward images of A, one pass per chunk of cells.
    std::vector<char> inB(inA.size(), 0);
    const int chunks = std::min<int>(64, static_cast<int>(A.size()));
    std::vector<std::vector<int>> hits(chunks);
    parallel_for(chunks, [&](int k) {
      const std::size_t lo = A.size() * k / chunks, hi = A.size() * (k + 1) / chunks;
      for (std::size_t i = lo; i < hi; ++i) {
        std::int64_t a = A[i] / N, b = A[i] % N;
        for (int s = 1; s <= Tl; ++s) {
          const std::int64_t a2 = mod(M(0, 0) * a + M(0, 1) * b, N);
          const std::int64_t b2 = mod(M(1, 0) * a + M(1, 1) * b, N);
          a = a2, b = b2;
          if (s >= t0 && inA[a * N + b]) hits[k].push_back(static_cast<int>(a * N + b));
        }
      }
    });
    for (const auto& h : hits)
      for (int c : h) inB[c] = 1;

    PartitionGroup g;
    g.t = t0;
    g.T = Tl;
    g.direction = WindowDirection::Forward;
    std::vector<int> B;
    for (int c : A) (inB[c] ? B : g.members).push_back(c);
    g.sigma = g.members.size() * cell;
    res.levels.push_back({Tl, static_cast<int>(A.size()), static_cast<int>(B.size())});
    cert.groups.push_back(std::move(g));
    for (int c : A) inA[c] = 0;
    A = std::move(B);

    if (A.size() < eps * res.size_A0 || eps >= 1.0 || Tl / 2 < 2 * t0 || A.empty()) break;
  }
  cert.B = A;
  cert.sigma_B = A.size() * cell;
  res.residual_ratio = double(A.size()) / res.size_A0;
  if (opts.h > 0.0) cert.check_ehrenfest(max_expansion_rate(map));
  return res;
}

bool reverify_contraction(const HyperbolicToyMap& map, const PartitionCertificate& cert, int N) {
  const double cell = 1.0 / (double(N) * N);
  std::vector<int> all(cert.B);
  for (const auto& g : cert.groups) all.insert(all.end(), g.members.begin(), g.members.end());
  std::vector<int> sorted = all;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) return false;
  if (std::abs(sorted.size() * cell - cert.sigma_total) > 0.5 * cell) return false;
  if (!cert.skeleton_hashes.empty() && cells_hash(sorted) != cert.skeleton_hashes.front())
    return false;

  std::vector<char> in(std::size_t(N) * N, 0);
  for (const auto& g : cert.groups) {
    if (std::abs(g.members.size() * cell - g.sigma) > 0.5 * cell) return false;
    for (int c : g.members) in[c] = 1;
    const int t = static_cast<int>(std::ceil(g.t)), T = static_cast<int>(std::floor(g.T));
    std::vector<char> bad(T + 1, 0);
    parallel_for(T - t + 1, [&](int k) {
      const auto P = map.power_mod(t + k, N);
      for (int c : g.members) {
        const std::int64_t a = c / N, b = c % N;
        const std::int64_t a2 = mod(P(0, 0) * a + P(0, 1) * b, N);
        const std::int64_t b2 = mod(P(1, 0) * a + P(1, 1) * b, N);
        if (in[a2 * N + b2]) {
          bad[t + k] = 1;
          return;
        }
      }
    });
    for (int c : g.members) in[c] = 0;
    if (std::find(bad.begin(), bad.end(), 1) != bad.end()) return false;
  }
  return true;
}

}  // namespace eigavg
