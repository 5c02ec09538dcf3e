#include "siap/step2.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <string>

#include <spdlog/spdlog.h>

#include "siap/error.hpp"

namespace siap {

namespace {

void check_shapes(const MaskedMatrix& x1, const Matrix& phi, const Step2State& s, const Matrix& gamma) {
  const Index r = s.a.cols();
  if (s.a.rows() != x1.rows() || s.b_tilde.rows() != x1.cols() || s.b_tilde.cols() != r ||
      phi.rows() != x1.cols() || s.theta.rows() != phi.cols() || s.theta.cols() != r ||
      (gamma.rows() > 0 && gamma.cols() != r)) {
    throw DimensionError("step2: inconsistent factor, basis or Gamma shapes");
  }
}

// Right-multiplication by (G)^{-1} for a small symmetric G, pseudo-inverse when singular.
Matrix right_solve_sym(const Matrix& rhs, const Matrix& g) {
  Eigen::LLT<Matrix> chol(g);
  if (chol.info() == Eigen::Success && chol.rcond() > 1e-13) return chol.solve(rhs.transpose()).transpose();
  return Eigen::CompleteOrthogonalDecomposition<Matrix>(g).solve(rhs.transpose()).transpose();
}

// AR coefficient of lag j as a vector: d_0 = 1, d_j = -gamma_j.
Vector ar_coeff(const Matrix& gamma, Index j, Index r) {
  if (j == 0) return Vector::Ones(r);
  return -gamma.row(j - 1).transpose();
}

}  // namespace

BUpdateVariant resolve_variant(BUpdateVariant v, Index rank) {
  if (v != BUpdateVariant::Auto) return v;
  return rank <= 15 ? BUpdateVariant::Vectorized : BUpdateVariant::Sequential;
}

Matrix estimate_gamma(const Matrix& b_tilde, Index p, const std::vector<bool>& downtime) {
  const Index n = b_tilde.rows();
  const Index r = b_tilde.cols();
  if (p < 0) throw ParameterError("estimate_gamma: p must be >= 0");
  if (static_cast<Index>(downtime.size()) != n) throw DimensionError("estimate_gamma: downtime flag count");
  if (p == 0) return Matrix(0, r);
  if (p > n / 2) throw ParameterError("estimate_gamma: p must not exceed floor(n/2)");
  // Windows c..c+p with no downtime column.
  std::vector<Index> starts;
  Index run = 0;
  for (Index t = 0; t < n; ++t) {
    run = downtime[static_cast<std::size_t>(t)] ? 0 : run + 1;
    if (run >= p + 1) starts.push_back(t - p);
  }
  if (static_cast<Index>(starts.size()) < p) {
    throw ConditioningError("estimate_gamma: fewer than p complete lag windows outside downtime");
  }
  Matrix gamma(p, r);
  for (Index k = 0; k < r; ++k) {
    Matrix normal = Matrix::Zero(p, p);
    Vector rhs = Vector::Zero(p);
    Vector lags(p);
    for (const Index c : starts) {
      for (Index l = 1; l <= p; ++l) lags(l - 1) = b_tilde(c + p - l, k);
      normal.noalias() += lags * lags.transpose();
      rhs += b_tilde(c + p, k) * lags;
    }
    Eigen::LLT<Matrix> chol(normal);
    if (chol.info() != Eigen::Success || chol.rcond() < 1e-12) {
      throw ConditioningError("estimate_gamma: singular lag system for latent coordinate " +
                              std::to_string(k));
    }
    gamma.col(k) = chol.solve(rhs);
  }
  return gamma;
}

Matrix ar_residuals(const Matrix& b_tilde, const Matrix& gamma) {
  const Index n = b_tilde.rows();
  const Index r = b_tilde.cols();
  const Index p = gamma.rows();
  Matrix e(r, std::max<Index>(n - p, 0));
  for (Index c = 0; c + p < n; ++c) {
    Vector v = b_tilde.row(c + p).transpose();
    for (Index l = 1; l <= p; ++l) v -= gamma.row(l - 1).transpose().cwiseProduct(b_tilde.row(c + p - l).transpose());
    e.col(c) = v;
  }
  return e;
}

Eigen::SparseMatrix<double> ar_operator(Index n, const Matrix& gamma) {
  const Index p = gamma.rows();
  const Index r = gamma.cols();
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(std::max<Index>(n - p, 0) * (p + 1) * r));
  for (Index c = 0; c + p < n; ++c) {
    for (Index j = 0; j <= p; ++j) {
      const Vector d = ar_coeff(gamma, j, r);
      const Index t = c + p - j;
      for (Index k = 0; k < r; ++k) trips.emplace_back(c * r + k, t * r + k, d(k));
    }
  }
  Eigen::SparseMatrix<double> c0(std::max<Index>(n - p, 0) * r, n * r);
  c0.setFromTriplets(trips.begin(), trips.end());
  return c0;
}

double loss_f2(const MaskedMatrix& x1, const Matrix& phi, const Step2State& s, const Matrix& gamma,
               const Step2Hyper& hyper) {
  check_shapes(x1, phi, s, gamma);
  const Matrix b = s.b(phi);
  const double fit = project_observed(x1, x1.zero_filled() - s.a * b.transpose()).squaredNorm();
  const Index p = std::min<Index>(gamma.rows(), s.b_tilde.rows());
  const double head = s.b_tilde.topRows(p).squaredNorm();
  const double ar = hyper.alpha != 0.0 ? ar_residuals(s.b_tilde, gamma).squaredNorm() : 0.0;
  return fit + hyper.lambda1 * s.a.squaredNorm() + hyper.lambda2 * head + hyper.alpha * ar;
}

double loss_f2(const MaskedMatrix& x1, const Matrix& a, const Matrix& b, const Matrix& theta,
               const Matrix& phi, const Matrix& gamma, const Step2Hyper& hyper) {
  return loss_f2(x1, phi, Step2State{a, b - phi * theta, theta}, gamma, hyper);
}

Matrix update_theta2(const MaskedMatrix& x1, const SplineProjector& projector, const Step2State& s) {
  const Matrix& phi = projector.phi();
  const Matrix fill =
      fill_unobserved(MaskedMatrix(x1.zero_filled() - s.a * s.b_tilde.transpose(), x1.mask()),
                      s.a * s.theta.transpose() * phi.transpose());
  const Matrix lhs = projector.fit_columns(fill.transpose() * s.a);  // kappa x r
  return right_solve_sym(lhs, s.a.transpose() * s.a);
}

Matrix b_fill(const MaskedMatrix& x1, const Matrix& phi, const Step2State& s) {
  const Matrix trend = s.a * s.theta.transpose() * phi.transpose();
  Matrix out = s.a * s.b_tilde.transpose();
  for (Index j = 0; j < x1.cols(); ++j) {
    for (Index i = 0; i < x1.rows(); ++i) {
      if (x1.observed(i, j)) out(i, j) = x1(i, j) - trend(i, j);
    }
  }
  return out;
}

Matrix update_b2_vectorized(const MaskedMatrix& x1, const Matrix& phi, const Step2State& s,
                            const Matrix& gamma, const Step2Hyper& hyper) {
  check_shapes(x1, phi, s, gamma);
  const Index n = x1.cols();
  const Index r = s.a.cols();
  const Index p = gamma.rows();
  const Matrix ata = s.a.transpose() * s.a;
  const Matrix rhs = s.a.transpose() * b_fill(x1, phi, s);  // r x n

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(n * r * r + std::max<Index>(n - p, 0) * (p + 1) * (p + 1) * r));
  for (Index t = 0; t < n; ++t) {
    for (Index c = 0; c < r; ++c) {
      for (Index k = 0; k < r; ++k) trips.emplace_back(t * r + k, t * r + c, ata(k, c));
    }
    if (t < p) {
      for (Index k = 0; k < r; ++k) trips.emplace_back(t * r + k, t * r + k, hyper.lambda2);
    }
  }
  if (hyper.alpha != 0.0) {
    for (Index c = 0; c + p < n; ++c) {
      for (Index j = 0; j <= p; ++j) {
        const Vector dj = ar_coeff(gamma, j, r);
        for (Index jj = 0; jj <= p; ++jj) {
          const Vector djj = ar_coeff(gamma, jj, r);
          const Index t = c + p - j;
          const Index tt = c + p - jj;
          for (Index k = 0; k < r; ++k) trips.emplace_back(t * r + k, tt * r + k, hyper.alpha * dj(k) * djj(k));
        }
      }
    }
  }
  Eigen::SparseMatrix<double> h(n * r, n * r);
  h.setFromTriplets(trips.begin(), trips.end());
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::NaturalOrdering<int>> chol(h);
  if (chol.info() != Eigen::Success) {
    throw ConditioningError(
        "update_b2_vectorized: system matrix is not positive definite (need lambda2, alpha > 0 or full-rank A)");
  }
  const Vector z = chol.solve(Eigen::Map<const Vector>(rhs.data(), rhs.size()));
  return Eigen::Map<const Matrix>(z.data(), r, n).transpose();
}

Matrix update_b2_sequential(const MaskedMatrix& x1, const Matrix& phi, const Step2State& s,
                            const Matrix& gamma, const Step2Hyper& hyper) {
  check_shapes(x1, phi, s, gamma);
  const Index n = x1.cols();
  const Index r = s.a.cols();
  const Index p = gamma.rows();
  const Matrix ata = s.a.transpose() * s.a;
  const Matrix rhs = s.a.transpose() * b_fill(x1, phi, s);
  Matrix z = s.b_tilde.transpose();  // r x n, updated in place
  std::vector<Vector> d(static_cast<std::size_t>(p + 1));
  for (Index j = 0; j <= p; ++j) d[static_cast<std::size_t>(j)] = ar_coeff(gamma, j, r);

  for (Index t = 0; t < n; ++t) {
    Vector diag_add = Vector::Constant(r, t < p ? hyper.lambda2 : 0.0);
    Vector b = rhs.col(t);
    if (hyper.alpha != 0.0) {
      // Residuals c with t = c + p - j, i.e. c in [t - p, t] within [0, n - p - 1].
      for (Index c = std::max<Index>(0, t - p); c <= std::min<Index>(t, n - p - 1); ++c) {
        const Index j = c + p - t;
        const Vector& dj = d[static_cast<std::size_t>(j)];
        Vector others = Vector::Zero(r);
        for (Index jj = 0; jj <= p; ++jj) {
          if (jj == j) continue;
          others += d[static_cast<std::size_t>(jj)].cwiseProduct(z.col(c + p - jj));
        }
        diag_add += hyper.alpha * dj.cwiseAbs2();
        b -= hyper.alpha * dj.cwiseProduct(others);
      }
    }
    Matrix g = ata;
    g.diagonal() += diag_add;
    Eigen::LLT<Matrix> chol(g);
    if (chol.info() != Eigen::Success) {
      throw ConditioningError("update_b2_sequential: column system " + std::to_string(t) +
                              " is not positive definite");
    }
    z.col(t) = chol.solve(b);
  }
  return z.transpose();
}

Matrix update_a2(const MaskedMatrix& x1, const Matrix& a_prev, const Matrix& b, double lambda1) {
  const Matrix fill = fill_unobserved(x1, a_prev * b.transpose());
  return right_solve_sym(fill * b, b.transpose() * b + lambda1 * Matrix::Identity(b.cols(), b.cols()));
}

Step2State step2_sweep(const MaskedMatrix& x1, const SplineProjector& projector, const Step2State& s,
                       const Matrix& gamma, const Step2Hyper& hyper) {
  const Matrix& phi = projector.phi();
  Step2State next = s;
  if (hyper.detrend) next.theta = update_theta2(x1, projector, s);
  next.b_tilde = resolve_variant(hyper.variant, s.a.cols()) == BUpdateVariant::Vectorized
                     ? update_b2_vectorized(x1, phi, next, gamma, hyper)
                     : update_b2_sequential(x1, phi, next, gamma, hyper);
  next.a = update_a2(x1, s.a, next.b(phi), hyper.lambda1);
  return next;
}

double Step2Gradient::max_abs() const {
  double out = 0.0;
  if (a.size() > 0) out = std::max(out, a.cwiseAbs().maxCoeff());
  if (b_tilde.size() > 0) out = std::max(out, b_tilde.cwiseAbs().maxCoeff());
  if (theta.size() > 0) out = std::max(out, theta.cwiseAbs().maxCoeff());
  return out;
}

Step2Gradient loss_f2_gradient(const MaskedMatrix& x1, const Matrix& phi, const Step2State& s,
                               const Matrix& gamma, const Step2Hyper& hyper) {
  check_shapes(x1, phi, s, gamma);
  const Matrix b = s.b(phi);
  const Matrix resid = project_observed(x1, x1.zero_filled() - s.a * b.transpose());
  const Index p = gamma.rows();
  const Index n = x1.cols();
  Step2Gradient g;
  g.a = -2.0 * resid * b + 2.0 * hyper.lambda1 * s.a;
  g.b_tilde = -2.0 * resid.transpose() * s.a;
  g.b_tilde.topRows(std::min(p, n)) += 2.0 * hyper.lambda2 * s.b_tilde.topRows(std::min(p, n));
  if (hyper.alpha != 0.0) {
    const Matrix e = ar_residuals(s.b_tilde, gamma);
    for (Index c = 0; c + p < n; ++c) {
      for (Index j = 0; j <= p; ++j) {
        g.b_tilde.row(c + p - j) +=
            (2.0 * hyper.alpha * ar_coeff(gamma, j, s.a.cols()).cwiseProduct(e.col(c))).transpose();
      }
    }
  }
  g.theta = hyper.detrend ? Matrix(-2.0 * phi.transpose() * resid.transpose() * s.a)
                          : Matrix::Zero(s.theta.rows(), s.theta.cols());
  return g;
}

ImputedMatrix assemble_imputed(const MaskedMatrix& x1, const Matrix& a, const Matrix& b,
                               const Mask* original_mask) {
  if (original_mask && (original_mask->rows() != x1.rows() || original_mask->cols() != x1.cols())) {
    throw DimensionError("assemble_imputed: original mask shape");
  }
  ImputedMatrix out;
  out.values = fill_unobserved(x1, a * b.transpose());
  out.source.resize(x1.rows(), x1.cols());
  for (Index j = 0; j < x1.cols(); ++j) {
    for (Index i = 0; i < x1.rows(); ++i) {
      EntrySource tag = EntrySource::Step2;
      if (x1.observed(i, j)) {
        tag = (!original_mask || (*original_mask)(i, j)) ? EntrySource::Observed : EntrySource::Step1;
      }
      out.source(i, j) = static_cast<int>(tag);
    }
  }
  return out;
}

Step2Result step2_fit(const MaskedMatrix& x1, const PeriodicBasis& basis, const Step2Hyper& hyper,
                      const FactorPair* init, const Mask* original_mask) {
  const Index n = x1.cols();
  if (basis.grid_size() != n) throw DimensionError("step2_fit: basis grid does not match the column count");
  if (hyper.rank < 1) throw ParameterError("step2_fit: rank must be >= 1");
  if (hyper.p < 0 || hyper.p > n / 2) throw ParameterError("step2_fit: p must lie in [0, floor(n/2)]");
  if (hyper.lambda1 < 0.0 || hyper.lambda2 < 0.0 || hyper.alpha < 0.0) {
    throw ParameterError("step2_fit: lambda1, lambda2 and alpha must be >= 0");
  }
  if (x1.observed_count() == 0) throw InputError("step2_fit: no observed entries");

  std::vector<bool> downtime(static_cast<std::size_t>(n), false);
  std::vector<Index> working;
  for (Index j = 0; j < n; ++j) {
    if (x1.observed_in_col(j) == 0) {
      downtime[static_cast<std::size_t>(j)] = true;
    } else {
      working.push_back(j);
    }
  }

  FactorPair start;
  if (init) {
    start = *init;
  } else {
    SoftImputeOptions si;
    si.rank = hyper.rank;
    si.lambda = hyper.init_lambda;
    si.tol = hyper.init_tol;
    si.max_iter = hyper.init_max_iter;
    start = softimpute_als(x1, si);
  }
  if (start.a.rows() != x1.rows() || start.b.rows() != n || start.a.cols() != start.b.cols()) {
    throw DimensionError("step2_fit: initial factors do not match the data");
  }
  const Index r = start.a.cols();
  const Matrix& phi = basis.phi;

  Step2State s;
  s.a = start.a;
  s.theta = Matrix::Zero(basis.size(), r);
  const SplineProjector projector(phi);
  if (hyper.detrend) {
    // Latent mean path from the columns that carry data.
    const PeriodicBasis sub = basis.subset(working);
    Matrix b_rows(static_cast<Index>(working.size()), r);
    for (std::size_t k = 0; k < working.size(); ++k) b_rows.row(static_cast<Index>(k)) = start.b.row(working[k]);
    s.theta = SplineProjector(sub.phi).fit_columns(b_rows);
  }
  s.b_tilde = start.b - phi * s.theta;
  for (Index t = 0; t < n; ++t) {
    if (downtime[static_cast<std::size_t>(t)]) s.b_tilde.row(t).setZero();
  }
  Matrix gamma = estimate_gamma(s.b_tilde, hyper.p, downtime);

  Step2Model model;
  model.hyper = hyper;
  model.variant_used = resolve_variant(hyper.variant, r);
  double loss = loss_f2(x1, phi, s, gamma, hyper);
  model.loss_trace.push_back(loss);
  const double scale = std::max(loss, 1e-300);

  for (int k = 0; k < hyper.max_iter; ++k) {
    Step2State next = step2_sweep(x1, projector, s, gamma, hyper);
    const double next_loss = loss_f2(x1, phi, next, gamma, hyper);
    if (!std::isfinite(next_loss)) {
      throw DivergenceError("step2_fit: loss became non-finite at iteration " + std::to_string(k + 1));
    }
    const double change = relative_change(s.a, s.b(phi), next.a, next.b(phi));
    if (hyper.check_monotone && next_loss > loss + 1e-10 * scale) {
      throw InternalError("step2_fit: loss increased from " + std::to_string(loss) + " to " +
                          std::to_string(next_loss) + " at iteration " + std::to_string(k + 1));
    }
    model.loss_trace.push_back(next_loss);
    model.delta_trace.push_back(loss - next_loss);
    model.change_trace.push_back(change);
    s = std::move(next);
    loss = next_loss;
    model.iterations = k + 1;
    if (change < hyper.tol) {
      model.converged = true;
      break;
    }
    if (hyper.gamma_refresh > 0 && (k + 1) % hyper.gamma_refresh == 0) {
      gamma = estimate_gamma(s.b_tilde, hyper.p, downtime);
      loss = loss_f2(x1, phi, s, gamma, hyper);
    }
  }
  if (!model.converged) {
    spdlog::warn("step2_fit: stopped after {} iterations without meeting tol {:g}", model.iterations, hyper.tol);
  }

  model.a = s.a;
  model.b = s.b(phi);
  model.theta = s.theta;
  model.gamma = gamma;
  ImputedMatrix imputed = assemble_imputed(x1, model.a, model.b, original_mask);
  return Step2Result{std::move(model), std::move(imputed)};
}

ConvergenceReport convergence_report(const Step2Model& model, const MaskedMatrix& x1,
                                     const PeriodicBasis& basis) {
  ConvergenceReport rep;
  const auto& f = model.loss_trace;
  if (f.size() >= 2) {
    const double f1 = f.front();
    rep.min_delta = kInf;
    for (std::size_t k = 0; k + 1 < f.size(); ++k) {
      const double inc = f[k + 1] - f[k];
      if (f[k + 1] > f[k] + 1e-10 * f1) ++rep.monotone_violations;
      rep.worst_increase = std::max(rep.worst_increase, inc / std::max(f1, 1e-300));
      rep.min_delta = std::min(rep.min_delta, f[k] - f[k + 1]);
    }
    const auto iters = static_cast<double>(f.size() - 1);
    rep.delta_bound = (f.front() - f.back()) / iters;
    rep.rate_bound_holds = rep.min_delta <= rep.delta_bound + 1e-10;
  }
  if (model.a.size() > 0) {
    const Step2Gradient g = loss_f2_gradient(x1, basis.phi, model.state(basis.phi), model.gamma, model.hyper);
    rep.grad_a = g.a.cwiseAbs().maxCoeff();
    rep.grad_b = g.b_tilde.cwiseAbs().maxCoeff();
    rep.grad_theta = g.theta.size() > 0 ? g.theta.cwiseAbs().maxCoeff() : 0.0;
    const double terminal = f.empty() ? 0.0 : f.back();
    rep.stationarity = g.max_abs() / (1.0 + terminal);
  }
  return rep;
}

}  // namespace siap
