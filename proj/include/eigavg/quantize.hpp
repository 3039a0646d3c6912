#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "eigavg/submanifold.hpp"
#include "eigavg/tubes.hpp"

namespace eigavg {

using Complex = std::complex<double>;

inline constexpr int kRankCap = 32;
/// Tube cutoffs satisfy |Delta^alpha chi| <= kCutoffSeminorm h^{-delta |alpha|} for |alpha| <= 2.
inline constexpr double kCutoffSeminorm = 10.0;

/// Field on the N x N grid x = (a / N, b / N) of the flat torus.
struct GridField {
  int N = 0;
  double h = 0.0;
  Eigen::MatrixXcd values;  // values(a, b)

  static GridField zeros(int N, double h);
  /// Sum of c_m e^{2 pi i <m, x>}.
  static GridField from_modes(int N, double h,
                              const std::vector<std::pair<Eigen::Vector2i, Complex>>& terms);

  /// N a power of two with at least 8 points per wavelength 2 pi h.
  void validate() const;
  double norm() const;  // L^2 norm over the torus
  Complex inner(const GridField& other) const;
};

/// Unitary 2D discrete Fourier transform, in place. Frequency index a stands for
/// k = a for a < N/2 and a - N otherwise.
void fft2(Eigen::MatrixXcd& m, bool inverse);

/// Window recorded by tubes::check_window for the tube(s) behind a symbol.
struct SymbolWindow {
  double t0 = 0.0;
  double T = 0.0;
  WindowDirection direction = WindowDirection::Forward;
};

enum class PartitionNorm { Sum, SumOfSquares };

using SymbolFunction = std::function<double(const Eigen::Vector2d&, double)>;

/// Raw closed forms behind a normalized family.
struct PartitionInfo {
  std::vector<SymbolFunction> raw;
  PartitionNorm kind = PartitionNorm::Sum;
  /// Normalized values of every member at (x, theta).
  void eval(const Eigen::Vector2d& x, double theta, std::vector<double>& out) const;
};

/// Symbol a(x, xi) on the flat torus, zero-homogeneous in xi, sampled on an nx x nx
/// position grid times an angle grid and kept in factored form
/// a = sum_r x_factors(:, r) xi_factors(:, r) over the `active` angle columns.
struct SymbolGrid {
  int nx = 64;
  int ntheta = 256;
  double h = 0.0;
  double delta = 0.0;
  std::vector<int> active;     // angle-grid columns where a is not identically zero
  Eigen::MatrixXd x_factors;   // nx*nx x rank, row a*nx+b at x = (a/nx, b/nx)
  Eigen::MatrixXd xi_factors;  // active.size() x rank
  double feature = 0.0;        // smallest variation scale, 0 if unknown
  std::optional<int> tube_ref;
  std::optional<SymbolWindow> window;
  /// Closed form, used for exact transport; may be empty.
  SymbolFunction exact;
  /// Set on members of a normalized family.
  std::shared_ptr<const PartitionInfo> partition;
  int member = -1;

  /// Samples f on the grids (all angle columns unless `columns` is given) and factors it.
  static SymbolGrid from_function(const SymbolFunction& f,
                                  int nx, int ntheta, double h, double delta,
                                  std::vector<int> columns = {});
  /// Factors dense values (nx*nx x columns.size()) at relative Frobenius accuracy 1e-6.
  static SymbolGrid from_values(const Eigen::MatrixXd& values, std::vector<int> columns, int nx,
                                int ntheta, double h, double delta);

  int rank() const { return static_cast<int>(x_factors.cols()); }
  double theta(int column) const;
  /// Dense values over (position grid) x (active columns).
  Eigen::MatrixXd values() const;
  /// Closed form when available, else the grid value at the nearest nodes.
  double operator()(const Eigen::Vector2d& x, double theta) const;
};

/// Largest C over 1 <= |alpha| <= 2 with |Delta^alpha a| <= C h^{-delta |alpha|} spacing^alpha
/// on the (x1, x2, theta) grid, theta restricted to the active columns.
double sdelta_constant(const SymbolGrid& a);

/// Op_h(a) u = sum_r (f_r G_r u + G_r (f_r u)) / 2, G_r the Fourier multiplier
/// g_r(angle of 2 pi h k) by nearest angle column and f_r the trigonometric interpolant
/// of the position factor. Fields with at most 64 Fourier modes are handled by direct
/// convolution, others by FFT.
GridField weyl_quantize(const SymbolGrid& a, const GridField& u);

struct CutoffOptions {
  int nx = 256;
  int ntheta = 1024;
};

/// Mollified indicator (width R/4) of the tube around its skeleton: one inside
/// transverse phase distance 0.72 R and |t| <= tau + 3R/4 along the flow, zero beyond
/// 0.97 R and |t| >= tau + R.
SymbolGrid tube_cutoff(const Submanifold& H, const Tube& tube, double h, double delta,
                       const CutoffOptions& opts = {});

/// chi_j / n(S) with S = sum_k chi_k (or chi_j / sqrt(n(Q)), Q = sum_k chi_k^2), where
/// n(s) = s for s >= 1 and (1 + s^2) / 2 below; the sum (or sum of squares) is then
/// exactly one wherever the raw family reaches one.
std::vector<SymbolGrid> normalize_partition(const std::vector<SymbolGrid>& family,
                                            PartitionNorm kind = PartitionNorm::Sum);

/// sqrt(sum_{j in indices} chi_j^2), carrying `window`.
SymbolGrid group_symbol(const std::vector<SymbolGrid>& family, const std::vector<int>& indices,
                        const std::optional<SymbolWindow>& window);

/// Attaches the window to the symbol when check_window certified it.
void attach_window(SymbolGrid& chi, const WindowCheck& check, double t0, double T);

struct TimeAverageOptions {
  double tolerance = 1e-2;
  int grid = 32;   // coarse start grid per position axis
  int seeds = 8;
};

/// sup over phase space of (1/T) int_0^T chi^2 o G^s ds under the linear flow, from a
/// coarse start grid refined by compass search. Raises AssertionFailure above
/// t0/T (1 + tolerance) and CertificateMissingError without a window covering [t0, T].
double time_average_symbol(const SymbolGrid& chi, double t0, double T, int steps,
                           const TimeAverageOptions& opts = {});

struct MassReport {
  std::vector<int> tubes;
  std::vector<double> per_tube;  // ||Op(chi_j) u||^2
  double total = 0.0;
  double norm2 = 0.0;            // ||u||^2
  double ratio = 0.0;            // total / (t/T ||u||^2), or total / ||u||^2 without a group
  std::string group;
};

/// Group masses against the group's window; the group must carry a certified window.
MassReport localized_mass(const GridField& u, const std::vector<SymbolGrid>& family,
                          const PartitionGroup& group, const std::string& label = "G");
/// Masses of the whole family, ratio against ||u||^2.
MassReport cover_mass(const GridField& u, const std::vector<SymbolGrid>& family);

void write_mass_csv_header(std::ostream& out);
void write_mass_csv_rows(std::ostream& out, const MassReport& r);

/// 32-byte header (magic "EIGAVGGF", uint64 N, float64 h, 8 zero bytes), then
/// row-major (re, im) float64 pairs.
void write_grid(std::ostream& out, const GridField& u);
GridField read_grid(std::istream& in);

}  // namespace eigavg
