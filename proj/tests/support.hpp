#pragma once

// Shared fixtures and brute-force oracles. The oracles are deliberately
// naive (dense inverses, scalar loops) and share no code with the library.

#include <cmath>
#include <vector>

#include "siap/matrix_core.hpp"
#include "siap/rng.hpp"
#include "siap/types.hpp"

namespace siap::test {

inline Matrix random_matrix(Index rows, Index cols, Rng& rng, double sd = 1.0) {
  Matrix out(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) out(i, j) = sd * rng.normal();
  }
  return out;
}

inline Mask random_mask(Index rows, Index cols, double p_missing, Rng& rng) {
  Mask out(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) out(i, j) = !rng.bernoulli(p_missing);
  }
  return out;
}

/// Random SPD matrix with eigenvalues bounded away from zero.
inline Matrix random_spd(Index n, Rng& rng) {
  const Matrix g = random_matrix(n, n, rng);
  return g * g.transpose() + static_cast<double>(n) * Matrix::Identity(n, n);
}

inline double rel_diff(const Matrix& a, const Matrix& b) {
  const double scale = std::max(a.norm(), b.norm());
  return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

inline Matrix select_rows(const Matrix& m, const std::vector<Index>& idx) {
  Matrix out(static_cast<Index>(idx.size()), m.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Index>(k)) = m.row(idx[k]);
  return out;
}

inline Matrix select_block(const Matrix& m, const std::vector<Index>& r, const std::vector<Index>& c) {
  Matrix out(static_cast<Index>(r.size()), static_cast<Index>(c.size()));
  for (std::size_t a = 0; a < r.size(); ++a) {
    for (std::size_t b = 0; b < c.size(); ++b) out(static_cast<Index>(a), static_cast<Index>(b)) = m(r[a], c[b]);
  }
  return out;
}

/// Gaussian conditioning by explicit block inversion of the dense covariance.
struct DenseConditional {
  Vector mean;  // conditional mean of the missing block
  Matrix cov;   // conditional covariance of the missing block
};

inline DenseConditional dense_conditional(const Matrix& sigma, const Vector& mu, const Vector& x,
                                          const std::vector<Index>& obs, const std::vector<Index>& mis) {
  const Matrix s_oo = select_block(sigma, obs, obs);
  const Matrix s_mo = select_block(sigma, mis, obs);
  const Matrix s_mm = select_block(sigma, mis, mis);
  const Matrix s_oo_inv = s_oo.inverse();
  Vector r(static_cast<Index>(obs.size()));
  for (std::size_t k = 0; k < obs.size(); ++k) r(static_cast<Index>(k)) = x(obs[k]) - mu(obs[k]);
  Vector mu_m(static_cast<Index>(mis.size()));
  for (std::size_t k = 0; k < mis.size(); ++k) mu_m(static_cast<Index>(k)) = mu(mis[k]);
  return {mu_m + s_mo * s_oo_inv * r, s_mm - s_mo * s_oo_inv * s_mo.transpose()};
}

/// F2 by scalar loops: fit on the observed cells, ridge on A, head rows of
/// B~ and the AR residual sum, with d_0 = 1 and d_l = -gamma_l.
inline double naive_loss_f2(const MaskedMatrix& x, const Matrix& a, const Matrix& b_tilde, const Matrix& theta,
                            const Matrix& phi, const Matrix& gamma, double l1, double l2, double alpha) {
  const Index m = x.rows();
  const Index n = x.cols();
  const Index r = a.cols();
  const Index p = gamma.rows();
  double fit = 0.0;
  for (Index i = 0; i < m; ++i) {
    for (Index t = 0; t < n; ++t) {
      if (!x.observed(i, t)) continue;
      double v = 0.0;
      for (Index k = 0; k < r; ++k) {
        double btk = b_tilde(t, k);
        for (Index c = 0; c < phi.cols(); ++c) btk += phi(t, c) * theta(c, k);
        v += a(i, k) * btk;
      }
      fit += (x(i, t) - v) * (x(i, t) - v);
    }
  }
  double ridge_a = 0.0;
  for (Index i = 0; i < m; ++i) {
    for (Index k = 0; k < r; ++k) ridge_a += a(i, k) * a(i, k);
  }
  double head = 0.0;
  for (Index t = 0; t < std::min(p, n); ++t) {
    for (Index k = 0; k < r; ++k) head += b_tilde(t, k) * b_tilde(t, k);
  }
  double ar = 0.0;
  for (Index j = p; j < n; ++j) {
    for (Index k = 0; k < r; ++k) {
      double e = b_tilde(j, k);
      for (Index l = 1; l <= p; ++l) e -= gamma(l - 1, k) * b_tilde(j - l, k);
      ar += e * e;
    }
  }
  return fit + l1 * ridge_a + l2 * head + alpha * ar;
}

/// Dense Kronecker-form system of the B~ block, built entry by entry:
/// H = I_n (x) A^T A + l2 Q (x) I_r + alpha C0^T C0 over vec(B~^T).
inline Matrix dense_b_system(const Matrix& a, Index n, const Matrix& gamma, double l2, double alpha) {
  const Index r = a.cols();
  const Index p = gamma.rows();
  const Matrix ata = a.transpose() * a;
  Matrix h = Matrix::Zero(n * r, n * r);
  for (Index t = 0; t < n; ++t) h.block(t * r, t * r, r, r) = ata;
  for (Index t = 0; t < std::min(p, n); ++t) h.block(t * r, t * r, r, r) += l2 * Matrix::Identity(r, r);
  Matrix c0 = Matrix::Zero((n - p) * r, n * r);
  for (Index j = 0; j + p < n; ++j) {
    for (Index k = 0; k < r; ++k) {
      c0(j * r + k, (j + p) * r + k) = 1.0;
      for (Index l = 1; l <= p; ++l) c0(j * r + k, (j + p - l) * r + k) = -gamma(l - 1, k);
    }
  }
  h += alpha * c0.transpose() * c0;
  return h;
}

}  // namespace siap::test
