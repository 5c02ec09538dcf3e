#pragma once

#include <cstdint>
#include <vector>

#include "siap/matrix_core.hpp"
#include "siap/spline_basis.hpp"
#include "siap/types.hpp"

namespace siap {

/// Sigma = diag(lambda) + L L^T, inverted through the Woodbury identity.
class SpikedCovariance {
 public:
  SpikedCovariance() = default;
  SpikedCovariance(Vector diag, Matrix loadings);

  const Vector& diag() const { return diag_; }
  const Matrix& loadings() const { return loadings_; }
  Index dim() const { return diag_.size(); }
  Index rank() const { return loadings_.cols(); }

  Matrix dense() const;
  /// Sigma^{-1} rhs.
  Matrix solve(const Matrix& rhs) const;
  double log_det() const;
  /// (I + L^T Lambda^{-1} L)^{-1}, the latent posterior covariance.
  Matrix latent_cov() const;

 private:
  void factorize();

  Vector diag_;
  Matrix loadings_;
  Eigen::LLT<Matrix> capacitance_;
};

/// Sigma_OO^{-1} rhs for the principal submatrix on `observed` indices,
/// evaluated through Woodbury on the r_L x r_L capacitance matrix.
Matrix woodbury_solve_subset(const SpikedCovariance& cov, const std::vector<Index>& observed,
                             const Matrix& rhs);

struct Step1Hyper {
  Index rank = 10;
  Index cov_rank = 100;  // r_L, capped at m and at the number of observed columns
  double lambda = 5.0;
  double tol = 1e-7;         // relative change of A B^T
  double tol_lambda = 1e-7;  // relative change of Lambda
  int max_iter = 200;
  std::uint64_t seed = 0;  // stream for the initial loadings
  int init_max_iter = 500;
  double init_tol = 1e-9;
};

/// Conditional first and second moments of the (working) columns of X
/// given the observed cells, at one parameter value.
struct CondExpectations {
  Matrix mean;                                  // E[X], m x n_w; observed cells pass through
  std::vector<std::vector<Index>> missing_rows;  // M_j per column
  std::vector<Matrix> missing_cov;               // Cov[x_{j,M_j} | x_{j,O_j}]
  double neg_loglik = 0.0;  // sum_j log|Sigma_OO| + r_O^T Sigma_OO^{-1} r_O at the expansion point

  Index cols() const { return mean.cols(); }
  /// E[x_j x_j^T] for column j.
  Matrix column_second_moment(Index j) const;
  /// E[X X^T] = sum_j E[x_j x_j^T].
  Matrix second_moment() const;
  /// sum_j E[(x_j - mu_j)(x_j - mu_j)^T].
  Matrix residual_scatter(const Matrix& mu) const;
};

struct LatentMoments {
  Matrix z_mean;  // r_L x n_w, E[z_j]
  Matrix zz_sum;  // sum_j E[z_j z_j^T]
  Matrix xz_sum;  // sum_j E[x~_j z_j^T], m x r_L
};

/// z-moments of the factor model x~_j | z_j ~ N(L z_j, Lambda) under the
/// expectations, with x~_j = x_j - mu_j.
LatentMoments latent_moments(const CondExpectations& e, const Matrix& mu, const SpikedCovariance& cov);

enum class EStepPath { Auto, ObservedCapacitance, MissingDowndate };

/// E-step for a data block with model mean `mu` (same shape as x).
CondExpectations estep(const MaskedMatrix& x, const Matrix& mu, const SpikedCovariance& cov,
                       EStepPath path = EStepPath::Auto);

/// B <- (<X>^T - Phi Theta) Sigma^{-1} A (A^T Sigma^{-1} A + lambda I)^{-1}; `trend` = Theta^T Phi^T.
Matrix update_b1(const CondExpectations& e, const Matrix& a, const Matrix& trend,
                 const SpikedCovariance& cov, double lambda);
/// One factor-analysis EM step for (L, Lambda) on the residual scatter about `mu`.
/// Lambda is floored at 1e-10 * mean(Lambda).
SpikedCovariance update_l_lambda(const CondExpectations& e, const Matrix& mu,
                                 const SpikedCovariance& prev);
/// Exact block minimiser in A: solves A B^T B + lambda Sigma A = (<X> - trend) B.
Matrix update_a1(const CondExpectations& e, const Matrix& b, const Matrix& trend,
                 const SpikedCovariance& cov, double lambda);
/// Theta <- (Phi^T Phi)^{-1} Phi^T (<X> - A B^T)^T.
Matrix update_theta1(const CondExpectations& e, const Matrix& a, const Matrix& b,
                     const SplineProjector& projector);

/// Penalised negative marginal log-likelihood of the observed cells
/// (log-determinant plus Mahalanobis terms over columns, plus the ridge).
double step1_objective(const MaskedMatrix& x, const Matrix& a, const Matrix& b, const Matrix& theta,
                       const Matrix& phi, const SpikedCovariance& cov, double lambda);

/// Expected complete-data penalised loss Q(theta' | theta_k) for fixed
/// expectations; every conditional update decreases it.
double step1_surrogate(const CondExpectations& e, const Matrix& a, const Matrix& b,
                       const Matrix& theta, const Matrix& phi, const SpikedCovariance& cov,
                       double lambda);

struct Step1Model {
  Matrix a;      // m x r
  Matrix b;      // n x r; zero rows on downtime columns
  Matrix theta;  // kappa x m
  SpikedCovariance cov;
  Step1Hyper hyper;
  std::vector<Index> working_cols;  // columns with at least one observation
  std::vector<double> trace;        // penalised objective at each iterate
  std::vector<double> lambda_change;
  int iterations = 0;
  bool converged = false;

  /// Theta^T phi(t) + A b_t for every column.
  Matrix fitted(const PeriodicBasis& basis) const;
};

struct Step1Result {
  Step1Model model;
  MaskedMatrix x1;  // scattered cells imputed by conditional means, downtime kept missing
};

Step1Result step1_fit(const MaskedMatrix& x, const PeriodicBasis& basis, const Step1Hyper& hyper);

}  // namespace siap
