#pragma once

#include <cstdint>

#include "eigavg/geometry.hpp"

namespace eigavg {

/// Linearized flow dG^t in chart coordinates (x1, x2, xi1, xi2).
using PhaseMatrix = Eigen::Matrix4d;

struct FlowConfig {
  double step = 0.01;
  double tol = 1e-9;
  bool renormalize = false;
  /// Cap on the number of global step halvings of the numeric integrator.
  int max_halvings = 10;

  void validate() const;
};

struct FlowState {
  CotangentPoint p;
  PhaseMatrix jac = PhaseMatrix::Identity();
  double t = 0.0;
  /// Number of sphere chart switches between the initial and final chart (0 or 1).
  int chart_switches = 0;
};

/// G^t(p) together with dG^t. Closed form on the sphere and flat tori; a
/// fourth-order symmetric composition of implicit midpoint steps otherwise.
FlowState geodesic_flow(const ManifoldModel& m, const CotangentPoint& p, double t,
                        const FlowConfig& cfg = {});

/// G^t(p) without the linearization.
CotangentPoint flow_point(const ManifoldModel& m, const CotangentPoint& p, double t,
                          const FlowConfig& cfg = {});

PhaseMatrix tangent_flow(const ManifoldModel& m, const CotangentPoint& p, double t,
                         const FlowConfig& cfg = {});

struct ExpansionOptions {
  double floor = 0.05;
  FlowConfig flow;
};

/// Finite-horizon estimate of the maximal expansion rate: max over quasi-random
/// unit covectors of log ||dG^T|| / T, floored at `opts.floor`.
double max_expansion_rate(const ManifoldModel& m, int sample_count, double T_max,
                          std::uint64_t seed, const ExpansionOptions& opts = {});

double ehrenfest_time(double h, double Lambda);

/// Low-discrepancy point in [0,1)^3 (additive recurrence on the plastic number).
Eigen::Vector3d quasi_random3(std::uint64_t index, std::uint64_t seed);

/// Quasi-random unit covector on S*M.
CotangentPoint quasi_random_unit_covector(const ManifoldModel& m, std::uint64_t index,
                                          std::uint64_t seed);

}  // namespace eigavg
