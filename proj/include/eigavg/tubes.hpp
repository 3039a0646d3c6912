#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "eigavg/flow.hpp"
#include "eigavg/submanifold.hpp"

namespace eigavg {

enum class WindowDirection { Forward, Backward };

std::string to_string(WindowDirection d);

/// Flow-out of a transversal ball in SN*H around `center`, represented by a skeleton.
struct Tube {
  ConormalSample center;
  double tau = 0.0;
  double radius = 0.0;
  /// Radius of the transversal ball actually flowed out (<= radius, chosen for coherence).
  double transversal_radius = 0.0;
  std::vector<CotangentPoint> transversal;
  /// Lifted skeleton: G^t(q) for q in `transversal`, |t| <= tau + radius.
  std::vector<PhaseVector> skeleton;
  /// Maximum same-time distance from skeleton points to the center trajectory.
  double coherence = 0.0;
  int color = -1;
  std::uint64_t hash = 0;
};

struct CoverOptions {
  double tau = 0.1;
  double R = 0.05;
  /// Optional semiclassical checks: R >= 5 h^delta, tau <= tau0. h = 0 disables them.
  double h = 0.0;
  double delta = 0.3;
  double tau0 = 1.0;
  int color_cap = 50;
  FlowConfig flow;
};

struct TubeCover {
  std::vector<Tube> tubes;
  int colors = 0;
  /// Tube index of the center covering each sample (nearest center).
  std::vector<int> sample_tube;
};

/// Tube built around one conormal sample.
Tube make_tube(const Submanifold& H, const ConormalSample& center, double tau, double R,
               const FlowConfig& flow = {});

/// Maximal R/2-separated centers among the samples, one tube each, greedy coloring.
TubeCover build_cover(const Submanifold& H, const std::vector<ConormalSample>& samples,
                      const CoverOptions& opts);

/// Smallest lifted distance between two skeletons.
double skeleton_distance(const Tube& a, const Tube& b);

struct WindowViolation {
  int tube = -1;   // tube whose flowed skeleton hit
  int target = -1; // tube that was hit
  double s = 0.0;
  double distance = 0.0;
};

struct WindowCheck {
  bool certified = false;
  WindowDirection direction = WindowDirection::Forward;
  std::optional<WindowViolation> violation;
};

struct WindowOptions {
  /// Step of the s-grid; 0 means R / (2 V) with V the phase speed bound.
  double step = 0.0;
  /// Check only the given direction instead of forward-then-backward.
  std::optional<WindowDirection> only;
  FlowConfig flow;
};

/// Tests G^s(A) n A = {} for s in [t0, T1] (forward or backward), A the union of the tubes.
WindowCheck check_window(const Submanifold& H, const std::vector<Tube>& tubes,
                         const std::vector<int>& indices, double t0, double T1,
                         const WindowOptions& opts = {});

// ---------------------------------------------------------------------------
// Partition certificates

struct PartitionGroup {
  std::vector<int> members;
  double t = 0.0;
  double T = 0.0;
  WindowDirection direction = WindowDirection::Forward;
  double sigma = 0.0;
};

struct PartitionCertificate {
  std::string mechanism;
  std::vector<int> B;
  double sigma_B = 0.0;
  double sigma_total = 0.0;
  std::vector<PartitionGroup> groups;
  double h = 0.0, delta = 0.0, R = 0.0, tau = 0.0, alpha = 0.4;
  std::vector<std::uint64_t> skeleton_hashes;
  std::vector<std::string> notes;

  /// T_l <= 2 alpha T_e(h) and alpha < 1 - 2 log R / log h; throws AssertionFailure.
  void check_ehrenfest(double Lambda) const;
};

nlohmann::json to_json(const PartitionCertificate& c);
PartitionCertificate certificate_from_json(const nlohmann::json& j);

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t skeleton_hash(const Tube& t);

/// Re-runs check_window on every group with a halved step and fresh flows.
bool reverify(const Submanifold& H, const std::vector<Tube>& tubes,
              const PartitionCertificate& cert, const WindowOptions& opts = {});

// ---------------------------------------------------------------------------
// Rotation mechanism

struct RotationOptions {
  double ball_radius = 0.3;  // radius of B_rho in the SN*H parameter
  double tau = 0.05;
  double R = 0.02;
  double angle_threshold = 0.1;
  FlowConfig flow;
};

struct RotationIntersection {
  double t = 0.0;
  double param = 0.0;       // parameter of the flowed point in B_rho
  double landing = 0.0;     // SN*H parameter where it lands
  int landing_branch = 0;
  double angle = 0.0;       // principal angle between the flow-out and T SN*H
};

struct RotationResult {
  std::vector<Tube> tubes;           // cover of B_rho
  std::vector<int> lower_dim_cover;  // tubes covering the intersection pre-images
  std::vector<int> complement;
  std::vector<RotationIntersection> intersections;
  WindowCheck window;
  double t0 = 0.0, T1 = 0.0;
};

/// Covers B_rho by tubes, finds where its flow-out over the window meets SN*H,
/// puts the tubes around those points aside and certifies the rest.
RotationResult rotation_partition(const Submanifold& H, const ConormalSample& rho, double t0,
                                  double T1, const RotationOptions& opts = {});

}  // namespace eigavg
