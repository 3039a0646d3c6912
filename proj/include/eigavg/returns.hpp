#pragma once

#include <iosfwd>
#include <limits>
#include <vector>

#include "eigavg/flow.hpp"
#include "eigavg/submanifold.hpp"

namespace eigavg {

/// A local minimum of the distance to SN*H below the proximity tolerance.
struct Crossing {
  double t = 0.0;  // signed time
  CotangentPoint point;
  double distance = 0.0;
  double param = 0.0;  // nearest SN*H parameter
  int branch = 0;
};

struct ReturnOptions {
  double prox_tol = 1e-2;
  /// Fine step used near SN*H; 0 means prox_tol / 4.
  double step = 0.0;
  FlowConfig flow;
};

struct ReturnRecord {
  ConormalSample rho;
  double T_H = std::numeric_limits<double>::infinity();
  CotangentPoint eta;
  double eta_residual = std::numeric_limits<double>::quiet_NaN();
  std::vector<Crossing> crossings;

  bool returned() const { return T_H < std::numeric_limits<double>::infinity(); }
};

/// Upper bound on the speed of G^t in the phase lift, used to skip ahead safely.
double phase_speed_bound(const ManifoldModel& m);

/// All SN*H proximity events of t -> G^{direction t}(p), 0 < t <= T_max.
/// Events are only armed once the trajectory has left the prox_tol neighborhood.
std::vector<Crossing> crossing_events(const Submanifold& H, const CotangentPoint& p, double T_max,
                                      int direction, const ReturnOptions& opts = {});

/// First return; direction -1 runs the flow backward (T_H is then reported as a positive time).
ReturnRecord first_return(const Submanifold& H, const ConormalSample& rho, double T_max,
                          const ReturnOptions& opts = {}, int direction = 1);

/// Weighted fraction of samples with T_H <= T_max.
double loop_fraction(const Submanifold& H, const std::vector<ConormalSample>& samples,
                     double T_max, const ReturnOptions& opts = {});

/// returns.csv: sample_index, base_x1, base_x2, xi1, xi2, T_H, eta_distance_residual, n_crossings.
void write_returns_csv(std::ostream& out, const std::vector<ReturnRecord>& records);

// ---------------------------------------------------------------------------
// Recurrence decomposition

/// Ball in SN*H for the phase-lift distance.
struct ConormalBall {
  CotangentPoint center;
  double radius = 0.0;
};

struct SampleCrossings {
  std::vector<Crossing> forward, backward;
};

std::vector<SampleCrossings> compute_crossings(const Submanifold& H,
                                               const std::vector<ConormalSample>& samples,
                                               double horizon, const ReturnOptions& opts = {});

struct RecurrenceOptions {
  ReturnOptions returns;
  /// Horizon used for the event search; 0 means 4 T.
  double horizon = 0.0;
  /// Largest horizon the run may afford; beyond it the result is inconclusive.
  double horizon_cap = 200.0;
};

struct RecurrenceDecomposition {
  bool conclusive = false;
  double T = 0.0;
  double horizon = 0.0;
  std::vector<double> weights;  // per sample
  std::vector<std::vector<int>> members;          // samples in U_i
  std::vector<std::vector<int>> E_plus, E_minus;  // E_i^{+,T}, E_i^{-,T}
  std::vector<std::vector<int>> E;                // E_i^T = E_i^{+,T} u E_i^{-,T}

  double total() const;
  double sigma_E(int i) const;
  /// B_N = [samples in no E_i^T] u [samples in some E_j^T, j >= N, and in no E_k^T, k < N],
  /// with balls numbered from 1 as in G_i = E_i^T.
  std::vector<int> B(int N) const;
  double sigma_B(int N) const;
  /// sigma(B_N)^{1/2} + sum_{i<N} sigma(E_i^T)^{1/2} T^{1/2} / S^{1/2}.
  double bracket(int N, double S) const;
};

/// Classifies samples into E_i^{+-,T}; throws CoverError if a sample lies in no ball.
RecurrenceDecomposition recurrence_decomposition(const Submanifold& H,
                                                 const std::vector<ConormalSample>& samples,
                                                 const std::vector<ConormalBall>& balls, double T,
                                                 const RecurrenceOptions& opts = {});

/// Same, reusing crossings computed up to at least the decomposition horizon.
RecurrenceDecomposition recurrence_decomposition(const Submanifold& H,
                                                 const std::vector<ConormalSample>& samples,
                                                 const std::vector<ConormalBall>& balls, double T,
                                                 const std::vector<SampleCrossings>& crossings,
                                                 double horizon, double horizon_cap = 200.0);

// ---------------------------------------------------------------------------
// Conjugate points

struct ConjugateEvent {
  double t = 0.0;
  int multiplicity = 1;
};

struct ConjugacyReport {
  CotangentPoint gamma_seed;
  std::vector<ConjugateEvent> events;
  double r = 0.0;

  /// Total multiplicity of events in [a, b].
  int multiplicity_in(double a, double b) const;
};

struct JacobiOptions {
  double step = 1e-3;
  FlowConfig flow;
};

/// Zeros in (t_begin, t_end] of the perpendicular Jacobi field J'' + K J = 0, J(0)=0, J'(0)=1.
ConjugacyReport conjugate_points(const ManifoldModel& m, const CotangentPoint& seed,
                                 double t_begin, double t_end, double r,
                                 const JacobiOptions& opts = {});

struct ConjugacyWitness {
  BasePoint x;
  double t = 0.0;
  double angle = 0.0;
  double distance = 0.0;
  double radius = 0.0;
};

struct ConjugacyCertificate {
  bool holds = true;
  std::vector<ConjugacyWitness> witnesses;  // first violation per point of U
  int grid_points = 0;
};

struct ConjugacyOptions {
  /// End of the time grid; 0 means 2 T.
  double horizon = 0.0;
  int directions = 64;
  JacobiOptions jacobi;
};

/// Checks d(x, C_x^{n-1, r_a(t), t}) >= r_a(t) on the grid t_{j+1} = t_j + r_a(t_j) in [T, horizon].
ConjugacyCertificate conjugacy_certificate(const ManifoldModel& m, const std::vector<BasePoint>& U,
                                           double T, double a, const ConjugacyOptions& opts = {});

}  // namespace eigavg
