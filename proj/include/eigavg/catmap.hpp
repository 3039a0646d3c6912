#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "eigavg/tubes.hpp"

namespace eigavg {

/// Integer unimodular hyperbolic automorphism of the torus R^2 / Z^2.
class HyperbolicToyMap {
 public:
  HyperbolicToyMap();
  explicit HyperbolicToyMap(const Eigen::Matrix2i& matrix);

  const Eigen::Matrix2i& matrix() const { return M_; }
  /// Largest eigenvalue modulus lambda > 1.
  double expansion() const { return lambda_; }
  Eigen::Vector2d stable_direction() const { return es_; }
  Eigen::Vector2d unstable_direction() const { return eu_; }

  /// M^s reduced modulo `modulus` (s >= 0).
  Eigen::Matrix<std::int64_t, 2, 2> power_mod(int s, std::int64_t modulus) const;

 private:
  Eigen::Matrix2i M_;
  double lambda_ = 0.0;
  Eigen::Vector2d es_, eu_;
};

/// log lambda, the exact expansion rate of the toy map.
double max_expansion_rate(const HyperbolicToyMap& map);

/// Rectangle on the torus: `length` along `direction`, `width` across it.
struct TorusRectangle {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  Eigen::Vector2d direction = Eigen::Vector2d::UnitX();
  double length = 0.1;
  double width = 0.02;
};

TorusRectangle stable_rectangle(const HyperbolicToyMap& map, double length, double width,
                                const Eigen::Vector2d& center = Eigen::Vector2d::Zero());

/// Grid cells (a, b), index a * N + b, whose point (a, b) / N lies in the rectangle.
std::vector<int> grid_cells(const TorusRectangle& A, int N);

struct ContractionOptions {
  int grid = 4096;
  /// Semiclassical parameter recorded in the certificate; 0 leaves the Ehrenfest check off.
  double h = 0.0;
  double delta = 0.3;
  double alpha = 0.4;
  /// Required per-step shrink factor of the rectangle's extent along its own axis.
  double shrink = 1.2;
};

struct ContractionLevel {
  int T = 0;
  int size_A = 0;
  int size_B = 0;
};

struct ContractionResult {
  PartitionCertificate certificate;
  std::vector<ContractionLevel> levels;
  int grid = 0;
  int size_A0 = 0;
  /// sigma(B) / sigma(A0) of the final residual.
  double residual_ratio = 0.0;
};

/// B_l = A_l n U_{s in [t0, T_l]} M^s(A_l), G_l = A_l \ B_l, A_{l+1} = B_l, T_{l+1} = T_l / 2.
ContractionResult contraction_partition(const HyperbolicToyMap& map, const TorusRectangle& A0,
                                        int t0, int T, double eps,
                                        const ContractionOptions& opts = {});

/// Independent check of a contraction certificate with direct matrix powers.
bool reverify_contraction(const HyperbolicToyMap& map, const PartitionCertificate& cert, int N);

}  // namespace eigavg
