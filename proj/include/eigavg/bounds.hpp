#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <iosfwd>
#include <string>
#include <vector>

#include "eigavg/flow.hpp"
#include "eigavg/submanifold.hpp"

namespace eigavg {

struct WeightedPoint {
  CotangentPoint p;
  double weight = 0.0;
};

enum class MeasureKind { Liouville, PeriodicOrbit, ProductDeltaXi };

/// Flow-invariant probability measure on S*M represented by weighted samples.
struct InvariantMeasure {
  MeasureKind kind = MeasureKind::Liouville;
  ManifoldModel manifold;
  std::vector<WeightedPoint> samples;
  /// Period of the orbit for PeriodicOrbit, 0 otherwise.
  double period = 0.0;

  /// Normalized Liouville measure from `count` quasi-random unit covectors.
  static InvariantMeasure liouville(const ManifoldModel& m, int count, std::uint64_t seed);
  /// Uniform measure dt / L along the closed orbit of `seed` with period L.
  static InvariantMeasure periodic_orbit(const ManifoldModel& m, const CotangentPoint& seed,
                                         double period, int count);
  /// dx x delta_{xi0} on a flat torus (xi0 unit), on a count x count grid.
  static InvariantMeasure product_delta_xi(const ManifoldModel& m, const Eigen::Vector2d& xi0,
                                           int count);

  double total() const;
};

/// Largest change of coarse bin masses (bins^2 position cells x `bins` angle cells)
/// after pushing the samples by G^t.
double flow_invariance_defect(const InvariantMeasure& mu, int bins, double t = 1.0);

/// Where a trajectory meets S*_H M: SN*H parameter of the base point and side of H.
struct HCrossing {
  double t = 0.0;
  ConormalSample at;  // rho on SN*H over the crossing point, branch = side of xi
};

struct ThickenResult {
  double limit = 0.0;
  std::vector<double> deltas;
  std::vector<double> estimates;  // (1 / 2 delta) mu(thickening) per delta
  double std_error = 0.0;         // Monte-Carlo standard error of `limit`
};

/// mu_H(A) = lim (1 / 2 delta) mu(U_{|t| <= delta} G^t(A)), A a predicate on the
/// point of S*_H M met by the trajectory (expressed as a conormal sample). Richardson
/// extrapolation over the two smallest deltas.
ThickenResult thicken_measure(const InvariantMeasure& mu, const Submanifold& H,
                              const std::function<bool(const ConormalSample&)>& A,
                              const std::vector<double>& deltas);

/// The crossing of S*_H M within |t| <= delta closest to t = 0, if any.
std::optional<HCrossing> h_crossing(const Submanifold& H, const CotangentPoint& p, double delta);

/// Quadrature of sqrt(f) over the conormal samples in A (h-power and C_{n,k} excluded).
double micro1_rhs(const std::vector<ConormalSample>& samples, const std::vector<double>& f,
                  const std::function<bool(const ConormalSample&)>& A);

struct BoundReport {
  double bracket = 0.0;
  double term_B = 0.0;
  double term_groups = 0.0;
  std::vector<double> pieces;  // term_B followed by one piece per group
  double prefactor = 1.0;      // R^{(n-1)/2} / tau^{1/2} for tube brackets
  double h = 0.0, R = 0.0, tau = 0.0;
  int n = 2, k = 1;
  std::string constant_slots;
};

struct SigmaGroup {
  double sigma = 0.0;
  double t = 0.0;
  double T = 0.0;
};

struct CountGroup {
  long count = 0;
  double t = 0.0;
  double T = 0.0;
};

/// sigma(B)^{1/2} + sum_l (sigma(G_l) t_l / T_l)^{1/2}.
BoundReport prelim_bracket(double sigma_B, const std::vector<SigmaGroup>& groups);

/// R^{(n-1)/2} tau^{-1/2} [ |B|^{1/2} + sum_l (|G_l| t_l / T_l)^{1/2} ].
BoundReport tube_bracket(long nB, const std::vector<CountGroup>& groups, double R, double tau,
                         int n, int k, double h = 0.0);

/// R^{(n-1)/2} h^{(1-k)/2}.
double single_tube_bound(double R, double h, int n, int k);

/// BoundReport rows: h, R, tau, n, k, bracket, term_B, term_groups, constant_slots.
void write_bound_csv_header(std::ostream& out);
void write_bound_csv_row(std::ostream& out, const BoundReport& r);

}  // namespace eigavg
