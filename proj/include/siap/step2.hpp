#pragma once

#include <Eigen/SparseCore>

#include <vector>

#include "siap/matrix_core.hpp"
#include "siap/softimpute.hpp"
#include "siap/spline_basis.hpp"
#include "siap/types.hpp"

namespace siap {

enum class BUpdateVariant { Auto, Vectorized, Sequential };

struct Step2Hyper {
  Index rank = 10;
  Index p = 2;
  double lambda1 = 3.0;
  double lambda2 = 3.0;
  double alpha = 3.0;
  double tol = 1e-8;
  int max_iter = 300;
  BUpdateVariant variant = BUpdateVariant::Auto;
  /// Latent spline mean; when off Theta stays zero and B~ = B.
  bool detrend = true;
  /// Re-estimate Gamma every k iterations (0 = never; Gamma is a fixed hyperparameter).
  int gamma_refresh = 0;
  /// SoftImpute initialisation.
  double init_lambda = 5.0;
  double init_tol = 1e-9;
  int init_max_iter = 500;
  /// Throw InternalError when F2 increases by more than 1e-10 F2(1).
  bool check_monotone = true;
};

/// Variant actually used: vectorised when r <= 15.
BUpdateVariant resolve_variant(BUpdateVariant v, Index rank);

/// Iterate of the alternating scheme in its native coordinates.
struct Step2State {
  Matrix a;        // m x r
  Matrix b_tilde;  // n x r, B - Phi Theta
  Matrix theta;    // kappa x r

  Matrix b(const Matrix& phi) const { return b_tilde + phi * theta; }
};

/// Diagonal AR(p) matrices, row l-1 holding diag(Gamma_l).
/// Least squares over windows of p+1 consecutive non-downtime columns,
/// decoupled per latent coordinate.
Matrix estimate_gamma(const Matrix& b_tilde, Index p, const std::vector<bool>& downtime);

/// e_c = b~_{c+p} - sum_l Gamma_l b~_{c+p-l}, c = 0..n-p-1, as an r x (n-p) grid.
Matrix ar_residuals(const Matrix& b_tilde, const Matrix& gamma);

/// Sparse C_0 with C_0 vec(B~^T) = vec(ar_residuals(B~)); (n-p) r x n r.
Eigen::SparseMatrix<double> ar_operator(Index n, const Matrix& gamma);

/// ||P(X1 - A B^T)||^2 + l1 ||A||^2 + l2 ||B~_{1:p}||^2 + alpha sum_j ||e_j||^2, B = B~ + Phi Theta.
double loss_f2(const MaskedMatrix& x1, const Matrix& phi, const Step2State& s, const Matrix& gamma,
               const Step2Hyper& hyper);
/// Same with B given in full.
double loss_f2(const MaskedMatrix& x1, const Matrix& a, const Matrix& b, const Matrix& theta,
               const Matrix& phi, const Matrix& gamma, const Step2Hyper& hyper);

/// Theta <- (Phi^T Phi)^{-1} Phi^T X*^T A (A^T A)^{-1},
/// X* = P(X1 - A B~^T) + P^perp(A Theta^T Phi^T).
Matrix update_theta2(const MaskedMatrix& x1, const SplineProjector& projector, const Step2State& s);

/// Filled detrended fit for the B~ block: P(X1 - A Theta^T Phi^T) + P^perp(A B~^T).
Matrix b_fill(const MaskedMatrix& x1, const Matrix& phi, const Step2State& s);

/// Direct solve of [I x A^T A + l2 Q x I + alpha C0^T C0] vec(Z^T) = vec(A^T X*_B); returns Z = B~.
Matrix update_b2_vectorized(const MaskedMatrix& x1, const Matrix& phi, const Step2State& s,
                            const Matrix& gamma, const Step2Hyper& hyper);
/// One Gauss-Seidel pass t = 0..n-1 of the r x r column systems of the same quadratic.
Matrix update_b2_sequential(const MaskedMatrix& x1, const Matrix& phi, const Step2State& s,
                            const Matrix& gamma, const Step2Hyper& hyper);

/// A <- X*_A B (B^T B + l1 I)^{-1}, X*_A = P(X1) + P^perp(A_prev B^T).
Matrix update_a2(const MaskedMatrix& x1, const Matrix& a_prev, const Matrix& b, double lambda1);

/// One (a)-(c) sweep.
Step2State step2_sweep(const MaskedMatrix& x1, const SplineProjector& projector, const Step2State& s,
                       const Matrix& gamma, const Step2Hyper& hyper);

/// Block gradients of F2 in (A, B~, Theta).
struct Step2Gradient {
  Matrix a;
  Matrix b_tilde;
  Matrix theta;
  double max_abs() const;
};
Step2Gradient loss_f2_gradient(const MaskedMatrix& x1, const Matrix& phi, const Step2State& s,
                               const Matrix& gamma, const Step2Hyper& hyper);

/// Entry provenance in the final imputed matrix.
enum class EntrySource : int { Observed = 0, Step1 = 1, Step2 = 2 };

struct ImputedMatrix {
  Matrix values;
  Eigen::ArrayXXi source;  // EntrySource codes
};

struct Step2Model {
  Matrix a;      // m x r
  Matrix b;      // n x r
  Matrix theta;  // kappa x r
  Matrix gamma;  // p x r
  Step2Hyper hyper;
  BUpdateVariant variant_used = BUpdateVariant::Vectorized;
  std::vector<double> loss_trace;   // F2 at iterates 1..K+1
  std::vector<double> delta_trace;  // successive decreases
  std::vector<double> change_trace; // relative change of A B^T
  int iterations = 0;
  bool converged = false;

  Step2State state(const Matrix& phi) const { return {a, b - phi * theta, theta}; }
};

struct Step2Result {
  Step2Model model;
  ImputedMatrix imputed;
};

/// `original_mask` (the mask before Step 1) separates observed from
/// Step-1 cells in the source tags; without it every cell of x1 is tagged observed.
Step2Result step2_fit(const MaskedMatrix& x1, const PeriodicBasis& basis, const Step2Hyper& hyper,
                      const FactorPair* init = nullptr, const Mask* original_mask = nullptr);

/// P(X1) + P^perp(A B^T) with source tags.
ImputedMatrix assemble_imputed(const MaskedMatrix& x1, const Matrix& a, const Matrix& b,
                               const Mask* original_mask);

struct ConvergenceReport {
  int monotone_violations = 0;
  double worst_increase = 0.0;  // max_k F2(k+1) - F2(k), relative to F2(1)
  double min_delta = 0.0;
  double delta_bound = 0.0;  // (F2(1) - F2(K+1)) / K
  bool rate_bound_holds = false;
  double grad_a = 0.0;
  double grad_b = 0.0;
  double grad_theta = 0.0;
  double stationarity = 0.0;  // max block gradient / (1 + F2 terminal)
};

ConvergenceReport convergence_report(const Step2Model& model, const MaskedMatrix& x1,
                                     const PeriodicBasis& basis);

}  // namespace siap
