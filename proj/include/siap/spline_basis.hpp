#pragma once

#include <span>
#include <vector>

#include "siap/matrix_core.hpp"
#include "siap/types.hpp"

namespace siap {

/// Evaluated periodic spline basis: row t of `phi` is phi(t_t)^T.
struct PeriodicBasis {
  Matrix phi;  // n x kappa
  std::vector<double> periods;
  std::vector<int> knots_per_period;
  std::vector<double> time_grid;

  Index size() const { return phi.cols(); }
  Index grid_size() const { return phi.rows(); }
  /// Basis restricted to the given grid rows (e.g. the non-downtime columns).
  PeriodicBasis subset(std::span<const Index> rows) const;
};

/// Periods and interior knot counts; serialised in run configs.
struct BasisSpec {
  std::vector<double> periods;
  std::vector<int> knots;

  /// 27-day rotation and 365.25-day annual cycles with 8 and 6 knots.
  static BasisSpec ssi_default();
  PeriodicBasis build(std::span<const double> grid) const;
};

/// 0, 1, ..., n-1: the time index of each column.
std::vector<double> index_grid(Index n);

/// Row of the periodic cubic B-spline basis (equally spaced knots on
/// [0, period), wrapped modulo the period) or its `derivative`-th derivative.
Vector periodic_bspline_row(double period, int num_knots, double t, int derivative = 0);

PeriodicBasis periodic_bspline_basis(double period, int num_knots, std::span<const double> grid);

/// Concatenates blocks; every block after the first loses its last column
/// since each block alone already sums to one.
PeriodicBasis stack_periods(std::span<const PeriodicBasis> bases);

/// Theta (kappa x d) minimising ||Y^T - Phi Theta||_F^2 + ridge ||Theta||_F^2.
/// Throws ConditioningError when ridge == 0 and Phi^T Phi is singular.
Matrix spline_fit(const Matrix& y, const PeriodicBasis& basis, double ridge);

/// 1e-8 * trace(Phi^T Phi) / kappa.
double default_ridge_guard(const Matrix& phi);

/// Cached normal-equation solver for repeated fits against one basis. Tries
/// the unridged system first and falls back to the ridge guard.
class SplineProjector {
 public:
  SplineProjector() = default;
  explicit SplineProjector(const Matrix& phi);

  /// Theta = (Phi^T Phi + ridge I)^{-1} Phi^T rhs, with rhs n x d.
  Matrix fit_columns(const Matrix& rhs) const;
  /// (Phi^T Phi + ridge I)^{-1} applied to a kappa x d right-hand side.
  Matrix solve_normal(const Matrix& rhs) const;
  double ridge() const { return ridge_; }
  const Matrix& phi() const { return phi_; }

 private:
  Matrix phi_;
  Eigen::LLT<Matrix> chol_;
  double ridge_ = 0.0;
};

/// Per-row least squares on the observed cells of Y (d x n); returns
/// Theta (kappa x d). Rows with too few observations use the ridge guard.
Matrix spline_fit_masked(const MaskedMatrix& y, const PeriodicBasis& basis);

}  // namespace siap
