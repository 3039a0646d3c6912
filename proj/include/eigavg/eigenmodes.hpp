#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "eigavg/geometry.hpp"
#include "eigavg/submanifold.hpp"

namespace eigavg {

using Complex = std::complex<double>;

inline constexpr int kMaxDegree = 100000;

enum class ModeKind { Zonal, HighestWeight, TorusMode, RandomSphereMode, EuclideanBeam };

std::string to_string(ModeKind k);

/// Closed-form eigenfunction of -h^2 Delta - 1 (or the Euclidean beam model).
struct EigenmodeSpec {
  ModeKind kind = ModeKind::Zonal;
  int l = 0;
  Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();
  Eigen::Vector2i m = Eigen::Vector2i::Zero();
  std::uint64_t seed = 0;
  double h = 1.0;
  /// Beam amplitude a(x); unset means a = 1.
  std::function<double(const Eigen::Vector2d&)> amplitude;
  /// Real coefficients of the random mode, indexed m + l for m in [-l, l], unit norm.
  std::vector<double> coefficients;

  static EigenmodeSpec zonal(int l, const Eigen::Vector3d& axis = Eigen::Vector3d::UnitZ());
  static EigenmodeSpec highest_weight(int l);
  static EigenmodeSpec torus_mode(const Eigen::Vector2i& m);
  static EigenmodeSpec random_sphere_mode(int l, std::uint64_t seed);
  static EigenmodeSpec euclidean_beam(double h,
                                      std::function<double(const Eigen::Vector2d&)> a = {});

  bool on_sphere() const;
  /// False for the beam, which is a model and not an eigenfunction.
  bool is_eigenfunction() const { return kind != ModeKind::EuclideanBeam; }
  /// `l` for sphere modes, `m1;m2` for torus modes, empty for the beam.
  std::string label() const;
};

/// Legendre P_l(x) by the upward three-term recurrence.
double legendre(int l, double x);
/// Fully normalized associated Legendre values P_l^m(x), m = 0..l, with
/// sqrt((2l+1)/4pi (l-m)!/(l+m)!) folded in.
std::vector<double> normalized_legendre_row(int l, double x);

struct GaussRule {
  std::vector<double> x, w;
};
/// n-point Gauss-Legendre rule on [-1, 1].
GaussRule gauss_legendre(int n);

/// Value of the mode. Sphere modes take chart coordinates, torus modes
/// coordinates in [0,1)^2, the beam a point of R^2 in x.
Complex eval_mode(const EigenmodeSpec& spec, const BasePoint& x);
/// Sphere modes at a point of the unit sphere in R^3.
Complex eval_mode(const EigenmodeSpec& spec, const Eigen::Vector3d& X);

struct AverageResult {
  Complex value;
  double error = 0.0;  // difference to the previous refinement level
  int nodes = 0;
};

/// Integral of the mode over H against sigma_H, refined quad_refine times by doubling.
AverageResult average_over(const Submanifold& H, const EigenmodeSpec& spec, int quad_refine = 2);

/// Integral of h^{-1/4} e^{i x1/h} e^{-|x|^2/2h} along the line through the origin at
/// `angle` to the beam axis (pi/2 = normal crossing), over |s| <= half_width.
Complex beam_restriction(double h, double angle, double half_width = -1.0);

/// L^2 norm over the model surface by tensor quadrature.
double l2_norm(const EigenmodeSpec& spec);

/// ||u||_inf / ||u||_2 on a grid with `grid_density` points per wavelength 2 pi h, refined
/// locally around the largest grid values.
double sup_ratio(const EigenmodeSpec& spec, double grid_density = 8.0);

enum class FitModel { PowerLaw, PowerTimesSqrtLog };

struct ScalingFit {
  std::vector<std::pair<double, double>> pairs;
  FitModel model = FitModel::PowerLaw;
  double exponent = 0.0;        // p in c h^p
  double log_correction = 0.0;  // q in (log 1/h)^q
  double prefactor = 0.0;       // c
  double residual = 0.0;        // largest |log residual|
};

ScalingFit scaling_fit(const std::vector<std::pair<double, double>>& pairs, FitModel model);

struct SweepRow {
  std::string kind;
  std::string l_or_m;
  double h = 0.0;
  Complex value;
  double err_estimate = 0.0;
};

void write_sweep_csv_header(std::ostream& out);
void write_sweep_csv_row(std::ostream& out, const SweepRow& r);

}  // namespace eigavg
