#pragma once

#include <vector>

#include "siap/matrix_core.hpp"
#include "siap/types.hpp"

namespace siap {

/// Rank-r factors of the Frobenius-regularised factorisation
///   1/2 ||P_Omega(X - A B^T)||_F^2 + lambda/2 (||A||_F^2 + ||B||_F^2).
struct FactorPair {
  Matrix a;  // m x r
  Matrix b;  // n x r
  double lambda = 0.0;
  Index rank = 0;
  std::vector<double> trace;  // objective after each completed sweep (index 0 = initial point)
  int iterations = 0;
  bool converged = false;

  Matrix product() const { return a * b.transpose(); }
};

struct SoftImputeOptions {
  Index rank = 10;
  double lambda = 5.0;
  double tol = 1e-9;
  int max_iter = 500;
  /// Record the objective after each half-update as well (monotonicity tests).
  bool record_half_steps = false;
};

double factor_objective(const MaskedMatrix& x, const Matrix& a, const Matrix& b, double lambda);

/// Alternating ridge regressions on the fill-in surrogate. The first sweep
/// starts from A = U_r S_r of the zero-filled matrix with B = 0, so each
/// sweep updates B and then A; a column with no observations keeps b_t = 0.
FactorPair softimpute_als(const MaskedMatrix& x, const SoftImputeOptions& options);

/// argmin_B ||F - A B^T||_F^2 + lambda ||B||_F^2 for a full fill F (m x n);
/// Cholesky of A^T A + lambda I with a pseudo-inverse fallback.
Matrix ridge_right_factor(const Matrix& fill, const Matrix& a, double lambda);
/// argmin_A ||F - A B^T||_F^2 + lambda ||A||_F^2.
Matrix ridge_left_factor(const Matrix& fill, const Matrix& b, double lambda);

/// P_Omega(X) + P_Omega^perp(A B^T).
Matrix complete_with(const MaskedMatrix& x, const FactorPair& factors);

/// SoftImpute on row-centred data: observed row means are removed before
/// the fit and added back, so an unobserved column is imputed by the means.
Matrix softimpute_row_centered(const MaskedMatrix& x, const SoftImputeOptions& options);

/// ||A_new B_new^T - A B^T||_F^2 / ||A B^T||_F^2 without forming m x n products.
double relative_change(const Matrix& a_old, const Matrix& b_old, const Matrix& a_new,
                       const Matrix& b_new);

}  // namespace siap
