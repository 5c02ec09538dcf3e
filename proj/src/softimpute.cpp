#include "siap/softimpute.hpp"

#include <cmath>
#include <string>

#include <Eigen/SVD>

#include "siap/error.hpp"

namespace siap {

namespace {

// Solves X (G + lambda I) = R for X, G = F^T F symmetric PSD (r x r).
Matrix ridge_solve_right(const Matrix& gram, double lambda, const Matrix& rhs) {
  Matrix system = gram;
  system.diagonal().array() += lambda;
  Eigen::LLT<Matrix> chol(system);
  if (chol.info() == Eigen::Success && chol.rcond() > 1e-13) {
    return chol.solve(rhs.transpose()).transpose();
  }
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(system);
  return cod.solve(rhs.transpose()).transpose();
}

}  // namespace

double relative_change(const Matrix& a_old, const Matrix& b_old, const Matrix& a_new,
                       const Matrix& b_new) {
  // ||P - Q||^2 = ||P||^2 - 2<P, Q> + ||Q||^2 with traces of r x r products.
  const Matrix aa_old = a_old.transpose() * a_old;
  const Matrix bb_old = b_old.transpose() * b_old;
  const Matrix aa_new = a_new.transpose() * a_new;
  const Matrix bb_new = b_new.transpose() * b_new;
  const double old_sq = (aa_old.array() * bb_old.array()).sum();
  const double new_sq = (aa_new.array() * bb_new.array()).sum();
  const double cross = ((a_old.transpose() * a_new).array() * (b_old.transpose() * b_new).array()).sum();
  const double diff = std::max(0.0, old_sq - 2.0 * cross + new_sq);
  if (old_sq <= 0.0) return diff > 0.0 ? kInf : 0.0;
  return diff / old_sq;
}

double factor_objective(const MaskedMatrix& x, const Matrix& a, const Matrix& b, double lambda) {
  if (a.rows() != x.rows() || b.rows() != x.cols() || a.cols() != b.cols()) {
    throw DimensionError("factor_objective: factor shapes do not match the data");
  }
  const Matrix resid = project_observed(x, x.zero_filled() - a * b.transpose());
  return 0.5 * resid.squaredNorm() + 0.5 * lambda * (a.squaredNorm() + b.squaredNorm());
}

Matrix ridge_right_factor(const Matrix& fill, const Matrix& a, double lambda) {
  return ridge_solve_right(a.transpose() * a, lambda, fill.transpose() * a);
}

Matrix ridge_left_factor(const Matrix& fill, const Matrix& b, double lambda) {
  return ridge_solve_right(b.transpose() * b, lambda, fill * b);
}

FactorPair softimpute_als(const MaskedMatrix& x, const SoftImputeOptions& options) {
  if (options.rank < 1) throw ParameterError("softimpute_als: rank must be >= 1");
  if (options.lambda < 0.0) throw ParameterError("softimpute_als: lambda must be >= 0");
  if (x.observed_count() == 0) throw InputError("softimpute_als: no observed entries");
  const Index m = x.rows();
  const Index n = x.cols();
  const Index r = std::min({options.rank, m, n});

  FactorPair out;
  out.lambda = options.lambda;
  out.rank = r;

  const Matrix zero_fill = x.zero_filled();
  Eigen::BDCSVD<Matrix> svd(zero_fill, Eigen::ComputeThinU);
  out.a = svd.matrixU().leftCols(r) * svd.singularValues().head(r).asDiagonal();
  out.b = Matrix::Zero(n, r);
  out.trace.push_back(factor_objective(x, out.a, out.b, options.lambda));

  for (int it = 0; it < options.max_iter; ++it) {
    const Matrix a_prev = out.a;
    const Matrix b_prev = out.b;
    out.b = ridge_right_factor(fill_unobserved(x, out.a * out.b.transpose()), out.a, options.lambda);
    if (options.record_half_steps) out.trace.push_back(factor_objective(x, out.a, out.b, options.lambda));
    out.a = ridge_left_factor(fill_unobserved(x, out.a * out.b.transpose()), out.b, options.lambda);
    const double objective = factor_objective(x, out.a, out.b, options.lambda);
    if (!std::isfinite(objective)) {
      throw DivergenceError("softimpute_als: objective became non-finite at iteration " +
                            std::to_string(it + 1));
    }
    out.trace.push_back(objective);
    out.iterations = it + 1;
    if (relative_change(a_prev, b_prev, out.a, out.b) < options.tol) {
      out.converged = true;
      break;
    }
  }
  return out;
}

Matrix complete_with(const MaskedMatrix& x, const FactorPair& factors) {
  return fill_unobserved(x, factors.product());
}

Matrix softimpute_row_centered(const MaskedMatrix& x, const SoftImputeOptions& options) {
  Vector means(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    const Index count = x.observed_in_row(i);
    if (count == 0) throw InputError("softimpute_row_centered: row " + std::to_string(i) + " is never observed");
    means(i) = x.mask().row(i).select(x.values().row(i), 0.0).sum() / static_cast<double>(count);
  }
  const Matrix centered = x.values().colwise() - means;
  const MaskedMatrix xc(centered, x.mask());
  const FactorPair factors = softimpute_als(xc, options);
  return fill_unobserved(x, (factors.product().colwise() + means).eval());
}

}  // namespace siap
