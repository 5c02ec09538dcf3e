#include "siap/step1.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <spdlog/spdlog.h>

#include "siap/error.hpp"
#include "siap/parallel.hpp"
#include "siap/rng.hpp"
#include "siap/softimpute.hpp"

namespace siap {

namespace {

Eigen::LLT<Matrix> checked_llt(const Matrix& m, const char* what) {
  Eigen::LLT<Matrix> chol(m);
  if (chol.info() != Eigen::Success) {
    throw ConditioningError(std::string(what) + ": covariance factor is not positive definite");
  }
  return chol;
}

double log_det_from_llt(const Eigen::LLT<Matrix>& chol) {
  return 2.0 * chol.matrixLLT().diagonal().array().log().sum();
}

Matrix gather_rows(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Index>(k)) = m.row(rows[k]);
  return out;
}

Vector gather(const Vector& v, const std::vector<Index>& idx) {
  Vector out(static_cast<Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out(static_cast<Index>(k)) = v(idx[k]);
  return out;
}

// Solves X (G + lambda I) = R with a Cholesky and a pseudo-inverse fallback.
Matrix solve_right_spd(Matrix g, double lambda, const Matrix& rhs) {
  g.diagonal().array() += lambda;
  Eigen::LLT<Matrix> chol(g);
  if (chol.info() == Eigen::Success && chol.rcond() > 1e-13) return chol.solve(rhs.transpose()).transpose();
  return Eigen::CompleteOrthogonalDecomposition<Matrix>(g).solve(rhs.transpose()).transpose();
}

struct ColumnResult {
  Vector mean;
  std::vector<Index> missing;
  Matrix cov;
  double neg_loglik = 0.0;
};

}  // namespace

SpikedCovariance::SpikedCovariance(Vector diag, Matrix loadings)
    : diag_(std::move(diag)), loadings_(std::move(loadings)) {
  if (loadings_.rows() != diag_.size()) throw DimensionError("SpikedCovariance: loadings row count");
  if ((diag_.array() <= 0.0).any() || !diag_.allFinite()) {
    throw ConditioningError("SpikedCovariance: diagonal part must be positive and finite");
  }
  factorize();
}

void SpikedCovariance::factorize() {
  const Matrix scaled = diag_.cwiseInverse().asDiagonal() * loadings_;
  Matrix cap = Matrix::Identity(rank(), rank());
  cap.noalias() += loadings_.transpose() * scaled;
  capacitance_ = checked_llt(cap, "SpikedCovariance");
}

Matrix SpikedCovariance::dense() const {
  Matrix out = loadings_ * loadings_.transpose();
  out.diagonal() += diag_;
  return out;
}

Matrix SpikedCovariance::solve(const Matrix& rhs) const {
  const Matrix scaled = diag_.cwiseInverse().asDiagonal() * rhs;
  if (rank() == 0) return scaled;
  const Matrix inner = capacitance_.solve(loadings_.transpose() * scaled);
  return scaled - diag_.cwiseInverse().asDiagonal() * (loadings_ * inner);
}

double SpikedCovariance::log_det() const {
  return diag_.array().log().sum() + (rank() > 0 ? log_det_from_llt(capacitance_) : 0.0);
}

Matrix SpikedCovariance::latent_cov() const {
  return capacitance_.solve(Matrix::Identity(rank(), rank()));
}

Matrix woodbury_solve_subset(const SpikedCovariance& cov, const std::vector<Index>& observed,
                             const Matrix& rhs) {
  if (static_cast<Index>(observed.size()) != rhs.rows()) {
    throw DimensionError("woodbury_solve_subset: rhs rows must match the observed index count");
  }
  const Vector dinv = gather(cov.diag(), observed).cwiseInverse();
  const Matrix l_obs = gather_rows(cov.loadings(), observed);
  const Matrix scaled = dinv.asDiagonal() * rhs;
  if (cov.rank() == 0) return scaled;
  Matrix cap = Matrix::Identity(cov.rank(), cov.rank());
  cap.noalias() += l_obs.transpose() * dinv.asDiagonal() * l_obs;
  const auto chol = checked_llt(cap, "woodbury_solve_subset");
  return scaled - dinv.asDiagonal() * (l_obs * chol.solve(l_obs.transpose() * scaled));
}

Matrix CondExpectations::column_second_moment(Index j) const {
  Matrix out = mean.col(j) * mean.col(j).transpose();
  const auto& miss = missing_rows[static_cast<std::size_t>(j)];
  const Matrix& v = missing_cov[static_cast<std::size_t>(j)];
  for (std::size_t a = 0; a < miss.size(); ++a) {
    for (std::size_t b = 0; b < miss.size(); ++b) {
      out(miss[a], miss[b]) += v(static_cast<Index>(a), static_cast<Index>(b));
    }
  }
  return out;
}

Matrix CondExpectations::second_moment() const {
  return residual_scatter(Matrix::Zero(mean.rows(), mean.cols()));
}

Matrix CondExpectations::residual_scatter(const Matrix& mu) const {
  const Matrix resid = mean - mu;
  Matrix out = Matrix::Zero(mean.rows(), mean.rows());
  out.selfadjointView<Eigen::Lower>().rankUpdate(resid);
  out = out.selfadjointView<Eigen::Lower>();
  for (Index j = 0; j < cols(); ++j) {
    const auto& miss = missing_rows[static_cast<std::size_t>(j)];
    const Matrix& v = missing_cov[static_cast<std::size_t>(j)];
    for (std::size_t a = 0; a < miss.size(); ++a) {
      for (std::size_t b = 0; b < miss.size(); ++b) {
        out(miss[a], miss[b]) += v(static_cast<Index>(a), static_cast<Index>(b));
      }
    }
  }
  return out;
}

LatentMoments latent_moments(const CondExpectations& e, const Matrix& mu, const SpikedCovariance& cov) {
  const Matrix sigma_z = cov.latent_cov();
  const Matrix beta = sigma_z * cov.loadings().transpose() * cov.diag().cwiseInverse().asDiagonal();
  const Matrix scatter = e.residual_scatter(mu);
  LatentMoments out;
  out.z_mean = beta * (e.mean - mu);
  out.xz_sum = scatter * beta.transpose();
  out.zz_sum = static_cast<double>(e.cols()) * sigma_z + beta * out.xz_sum;
  out.zz_sum = 0.5 * (out.zz_sum + out.zz_sum.transpose()).eval();
  return out;
}

CondExpectations estep(const MaskedMatrix& x, const Matrix& mu, const SpikedCovariance& cov,
                       EStepPath path) {
  const Index m = x.rows();
  const Index n = x.cols();
  if (mu.rows() != m || mu.cols() != n) throw DimensionError("estep: mean shape mismatch");
  if (cov.dim() != m) throw DimensionError("estep: covariance dimension mismatch");
  const Index rl = cov.rank();
  const Vector dinv = cov.diag().cwiseInverse();
  const Vector log_diag = cov.diag().array().log();
  const Matrix& l = cov.loadings();
  const Matrix u_full = dinv.cwiseSqrt().asDiagonal() * l;  // Lambda^{-1/2} L

  // Full-column capacitance and its inverse are shared by every column.
  Matrix cap_full = Matrix::Identity(rl, rl);
  cap_full.noalias() += u_full.transpose() * u_full;
  const auto cap_full_chol = checked_llt(cap_full, "estep");
  const Matrix cap_full_inv = cap_full_chol.solve(Matrix::Identity(rl, rl));
  const double cap_full_logdet = log_det_from_llt(cap_full_chol);

  std::vector<ColumnResult> results(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t jj) {
    const auto j = static_cast<Index>(jj);
    ColumnResult& res = results[jj];
    std::vector<Index> observed;
    for (Index i = 0; i < m; ++i) {
      (x.observed(i, j) ? observed : res.missing).push_back(i);
    }
    const auto n_obs = static_cast<Index>(observed.size());
    const auto n_mis = static_cast<Index>(res.missing.size());
    res.mean = mu.col(j);
    for (Index i : observed) res.mean(i) = x(i, j);
    if (n_obs == 0) {
      res.cov = gather_rows(cov.dense(), res.missing)(Eigen::all, res.missing);
      return;
    }
    // Whitened residual Lambda^{-1/2} r on the observed cells, zero on M.
    Vector white = Vector::Zero(m);
    double log_lambda_obs = 0.0;
    for (Index i : observed) {
      white(i) = (x(i, j) - mu(i, j)) * std::sqrt(dinv(i));
      log_lambda_obs += log_diag(i);
    }
    const Vector u = u_full.transpose() * white;  // L_O^T Lambda_O^{-1} r
    const Matrix u_mis = gather_rows(u_full, res.missing);

    bool use_downdate = path == EStepPath::MissingDowndate ||
                        (path == EStepPath::Auto && n_mis < rl && n_mis < n_obs);
    if (rl == 0) use_downdate = false;
    Vector v;           // C_j^{-1} u
    Matrix mis_inner;   // U_M C_j^{-1} U_M^T
    double log_cap = 0.0;
    bool done = false;
    if (use_downdate && n_mis > 0) {
      // C_j = C - U_M^T U_M; invert through the |M| x |M| system S = I - U_M C^{-1} U_M^T.
      // S loses definiteness to cancellation when some Lambda_i sits at its
      // floor; Auto then falls back to the capacitance form, which is >= I.
      const Matrix k = u_mis * cap_full_inv;  // |M| x r_L
      Matrix s = Matrix::Identity(n_mis, n_mis);
      s.noalias() -= k * u_mis.transpose();
      Eigen::LLT<Matrix> s_chol(s);
      const bool ok = s_chol.info() == Eigen::Success && s_chol.matrixLLT().diagonal().minCoeff() > 1e-4;
      if (!ok && path == EStepPath::MissingDowndate) {
        throw ConditioningError("estep: covariance factor is not positive definite");
      }
      if (ok) {
        const Vector cu = cap_full_inv * u;
        v = cu + k.transpose() * s_chol.solve(k * u);
        const Matrix p = Matrix::Identity(n_mis, n_mis) - s;  // U_M C^{-1} U_M^T
        mis_inner = p + p * s_chol.solve(p);
        log_cap = cap_full_logdet + log_det_from_llt(s_chol);
        done = true;
      }
    } else if (use_downdate) {
      v = cap_full_inv * u;
      log_cap = cap_full_logdet;
      done = true;
    }
    if (!done) {
      Matrix cap = Matrix::Identity(rl, rl);
      if (n_obs == m) {
        cap = cap_full;
      } else {
        const Matrix u_obs = gather_rows(u_full, observed);
        cap.selfadjointView<Eigen::Lower>().rankUpdate(u_obs.transpose());
        cap = cap.selfadjointView<Eigen::Lower>();
      }
      const auto chol = checked_llt(cap, "estep");
      v = chol.solve(u);
      log_cap = log_det_from_llt(chol);
      if (n_mis > 0) {
        const Matrix w = chol.matrixL().solve(u_mis.transpose());
        mis_inner = w.transpose() * w;
      }
    }
    res.neg_loglik = log_lambda_obs + log_cap + white.squaredNorm() - u.dot(v);
    if (n_mis > 0) {
      // E[x_M] = mu_M + L_M C_j^{-1} L_O^T Lambda_O^{-1} r_O,
      // Cov = Lambda_M + L_M C_j^{-1} L_M^T.
      const Vector sqrt_diag_mis = gather(cov.diag(), res.missing).cwiseSqrt();
      const Vector shift = sqrt_diag_mis.asDiagonal() * (u_mis * v);
      for (Index a = 0; a < n_mis; ++a) res.mean(res.missing[static_cast<std::size_t>(a)]) += shift(a);
      res.cov = sqrt_diag_mis.asDiagonal() * mis_inner * sqrt_diag_mis.asDiagonal();
      res.cov.diagonal() += sqrt_diag_mis.cwiseAbs2();
      res.cov = 0.5 * (res.cov + res.cov.transpose()).eval();
    } else {
      res.cov.resize(0, 0);
    }
  });

  CondExpectations out;
  out.mean.resize(m, n);
  out.missing_rows.resize(static_cast<std::size_t>(n));
  out.missing_cov.resize(static_cast<std::size_t>(n));
  for (std::size_t j = 0; j < results.size(); ++j) {
    out.mean.col(static_cast<Index>(j)) = results[j].mean;
    out.missing_rows[j] = std::move(results[j].missing);
    out.missing_cov[j] = std::move(results[j].cov);
    out.neg_loglik += results[j].neg_loglik;
  }
  return out;
}

Matrix update_b1(const CondExpectations& e, const Matrix& a, const Matrix& trend,
                 const SpikedCovariance& cov, double lambda) {
  if (trend.rows() != e.mean.rows() || trend.cols() != e.mean.cols()) {
    throw DimensionError("update_b1: trend shape mismatch");
  }
  const Matrix sinv_a = cov.solve(a);  // m x r
  const Matrix rhs = (e.mean - trend).transpose() * sinv_a;
  return solve_right_spd(a.transpose() * sinv_a, lambda, rhs);
}

SpikedCovariance update_l_lambda(const CondExpectations& e, const Matrix& mu,
                                 const SpikedCovariance& prev) {
  const auto n = static_cast<double>(e.cols());
  if (e.cols() == 0) throw InputError("update_l_lambda: no columns");
  const LatentMoments z = latent_moments(e, mu, prev);
  const Matrix scatter = e.residual_scatter(mu);
  Matrix l_new;
  if (prev.rank() > 0) {
    const auto chol = checked_llt(z.zz_sum, "update_l_lambda");
    l_new = chol.solve(z.xz_sum.transpose()).transpose();
  } else {
    l_new = Matrix::Zero(prev.dim(), 0);
  }
  Vector diag = scatter.diagonal();
  if (prev.rank() > 0) {
    diag -= 2.0 * (l_new.array() * z.xz_sum.array()).rowwise().sum().matrix();
    diag += ((l_new * z.zz_sum).array() * l_new.array()).rowwise().sum().matrix();
  }
  diag /= n;
  const double floor = 1e-10 * std::max(diag.mean(), prev.diag().mean());
  diag = diag.cwiseMax(floor);
  return SpikedCovariance(std::move(diag), std::move(l_new));
}

Matrix update_a1(const CondExpectations& e, const Matrix& b, const Matrix& trend,
                 const SpikedCovariance& cov, double lambda) {
  const Matrix rhs = (e.mean - trend) * b;  // m x r
  const Index r = b.cols();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(b.transpose() * b);
  const Matrix& v = eig.eigenvectors();
  const Vector& ev = eig.eigenvalues();
  const Matrix rhs_rot = rhs * v;
  Matrix a_rot(rhs.rows(), r);
  const Matrix& l = cov.loadings();
  for (Index k = 0; k < r; ++k) {
    const double e_k = std::max(ev(k), 0.0);
    if (lambda == 0.0) {
      a_rot.col(k) = e_k > 1e-14 * std::max(1.0, ev.maxCoeff()) ? Vector(rhs_rot.col(k) / e_k)
                                                                 : Vector::Zero(rhs.rows());
      continue;
    }
    // (e_k I + lambda Lambda + lambda L L^T) a = rhs, diagonal plus low rank.
    const Vector d = (e_k + lambda * cov.diag().array()).matrix();
    const Vector dinv = d.cwiseInverse();
    const Vector y = dinv.asDiagonal() * rhs_rot.col(k);
    if (cov.rank() == 0) {
      a_rot.col(k) = y;
      continue;
    }
    Matrix cap = Matrix::Identity(cov.rank(), cov.rank()) / lambda;
    cap.noalias() += l.transpose() * dinv.asDiagonal() * l;
    const auto chol = checked_llt(cap, "update_a1");
    a_rot.col(k) = y - dinv.asDiagonal() * (l * chol.solve(l.transpose() * y));
  }
  return a_rot * v.transpose();
}

Matrix update_theta1(const CondExpectations& e, const Matrix& a, const Matrix& b,
                     const SplineProjector& projector) {
  return projector.fit_columns((e.mean - a * b.transpose()).transpose());
}

double step1_objective(const MaskedMatrix& x, const Matrix& a, const Matrix& b, const Matrix& theta,
                       const Matrix& phi, const SpikedCovariance& cov, double lambda) {
  const Matrix mu = a * b.transpose() + theta.transpose() * phi.transpose();
  const CondExpectations e = estep(x, mu, cov);
  return e.neg_loglik + lambda * (a.squaredNorm() + b.squaredNorm());
}

double step1_surrogate(const CondExpectations& e, const Matrix& a, const Matrix& b,
                       const Matrix& theta, const Matrix& phi, const SpikedCovariance& cov,
                       double lambda) {
  const Matrix mu = a * b.transpose() + theta.transpose() * phi.transpose();
  const Matrix resid = e.mean - mu;
  double trace_term = (resid.array() * cov.solve(resid).array()).sum();
  // tr(Sigma^{-1} V_j) over the missing blocks: need Sigma^{-1} restricted to M_j x M_j.
  const Matrix& l = cov.loadings();
  const Vector dinv = cov.diag().cwiseInverse();
  const Matrix inner = cov.rank() > 0 ? Matrix(cov.latent_cov()) : Matrix(0, 0);
  for (Index j = 0; j < e.cols(); ++j) {
    const auto& miss = e.missing_rows[static_cast<std::size_t>(j)];
    if (miss.empty()) continue;
    const Matrix& v = e.missing_cov[static_cast<std::size_t>(j)];
    const Vector dm = gather(dinv, miss);
    Matrix prec = Matrix(dm.asDiagonal());
    if (cov.rank() > 0) {
      const Matrix lm = dm.asDiagonal() * gather_rows(l, miss);
      prec -= lm * inner * lm.transpose();
    }
    trace_term += (prec.array() * v.array()).sum();
  }
  return static_cast<double>(e.cols()) * cov.log_det() + trace_term +
         lambda * (a.squaredNorm() + b.squaredNorm());
}

Matrix Step1Model::fitted(const PeriodicBasis& basis) const {
  return theta.transpose() * basis.phi.transpose() + a * b.transpose();
}

Step1Result step1_fit(const MaskedMatrix& x, const PeriodicBasis& basis, const Step1Hyper& hyper) {
  const Index m = x.rows();
  const Index n = x.cols();
  if (basis.grid_size() != n) throw DimensionError("step1_fit: basis grid does not match the column count");
  if (hyper.rank < 1) throw ParameterError("step1_fit: rank must be >= 1");
  if (hyper.lambda < 0.0) throw ParameterError("step1_fit: lambda must be >= 0");
  if (const auto empty = x.empty_rows(); !empty.empty()) {
    throw InputError("step1_fit: row " + std::to_string(empty.front()) +
                     " has no observed entry; nothing to impute it from");
  }

  Step1Model model;
  model.hyper = hyper;
  for (Index j = 0; j < n; ++j) {
    if (x.observed_in_col(j) > 0) model.working_cols.push_back(j);
  }
  const auto nw = static_cast<Index>(model.working_cols.size());
  Index rl = std::min(hyper.cov_rank, m);
  if (nw < rl) {
    spdlog::warn("step1_fit: only {} observed columns; reducing r_L from {} to {}", nw, rl, nw);
    rl = nw;
  }
  model.hyper.cov_rank = rl;

  // Working block: columns with observations.
  Matrix xw_values(m, nw);
  Mask xw_mask(m, nw);
  for (Index k = 0; k < nw; ++k) {
    xw_values.col(k) = x.values().col(model.working_cols[static_cast<std::size_t>(k)]);
    xw_mask.col(k) = x.mask().col(model.working_cols[static_cast<std::size_t>(k)]);
  }
  const MaskedMatrix xw(std::move(xw_values), std::move(xw_mask));
  const PeriodicBasis basis_w = basis.subset(model.working_cols);
  const Matrix& phi_w = basis_w.phi;
  const SplineProjector projector(phi_w);

  // Initialisation.
  Rng rng(hyper.seed);
  Matrix l0(m, rl);
  for (Index c = 0; c < rl; ++c) {
    for (Index i = 0; i < m; ++i) l0(i, c) = 1e-2 * rng.normal();
  }
  SpikedCovariance cov(Vector::Constant(m, 1e-4), std::move(l0));
  Matrix theta = spline_fit_masked(xw, basis_w);
  Matrix trend = theta.transpose() * phi_w.transpose();
  {
    const MaskedMatrix detrended(xw.values() - trend, xw.mask());
    SoftImputeOptions si;
    si.rank = hyper.rank;
    si.lambda = hyper.lambda;
    si.tol = hyper.init_tol;
    si.max_iter = hyper.init_max_iter;
    const FactorPair init = softimpute_als(detrended, si);
    model.a = init.a;
    model.b = init.b;
  }

  for (int k = 0; k < hyper.max_iter; ++k) {
    const Matrix mu = model.a * model.b.transpose() + trend;
    const CondExpectations e = estep(xw, mu, cov);
    const double objective = e.neg_loglik + hyper.lambda * (model.a.squaredNorm() + model.b.squaredNorm());
    if (!std::isfinite(objective)) {
      throw DivergenceError("step1_fit: objective became non-finite at iteration " + std::to_string(k + 1));
    }
    model.trace.push_back(objective);

    const Matrix b_new = update_b1(e, model.a, trend, cov, hyper.lambda);
    SpikedCovariance cov_new = update_l_lambda(e, model.a * b_new.transpose() + trend, cov);
    const Matrix a_new = update_a1(e, b_new, trend, cov_new, hyper.lambda);
    theta = update_theta1(e, a_new, b_new, projector);
    trend = theta.transpose() * phi_w.transpose();

    const double ab_change = relative_change(model.a, model.b, a_new, b_new);
    const double lambda_change =
        (cov_new.diag() - cov.diag()).squaredNorm() / cov.diag().squaredNorm();
    model.lambda_change.push_back(lambda_change);
    model.a = a_new;
    model.b = b_new;
    cov = std::move(cov_new);
    model.iterations = k + 1;
    if (!model.a.allFinite() || !model.b.allFinite() || !theta.allFinite()) {
      throw DivergenceError("step1_fit: non-finite parameters at iteration " + std::to_string(k + 1));
    }
    if (ab_change < hyper.tol && lambda_change < hyper.tol_lambda) {
      model.converged = true;
      break;
    }
  }

  // Conditional means at the final parameters.
  const Matrix mu = model.a * model.b.transpose() + trend;
  const CondExpectations final_e = estep(xw, mu, cov);
  model.trace.push_back(final_e.neg_loglik + hyper.lambda * (model.a.squaredNorm() + model.b.squaredNorm()));

  Matrix x1_values = x.values();
  Mask x1_mask = x.mask();
  for (Index k = 0; k < nw; ++k) {
    const Index j = model.working_cols[static_cast<std::size_t>(k)];
    for (Index i : final_e.missing_rows[static_cast<std::size_t>(k)]) {
      x1_values(i, j) = final_e.mean(i, k);
      x1_mask(i, j) = true;
    }
  }

  Matrix b_full = Matrix::Zero(n, model.a.cols());
  for (Index k = 0; k < nw; ++k) b_full.row(model.working_cols[static_cast<std::size_t>(k)]) = model.b.row(k);
  model.b = std::move(b_full);
  model.theta = std::move(theta);
  model.cov = std::move(cov);
  return Step1Result{std::move(model), MaskedMatrix(std::move(x1_values), std::move(x1_mask))};
}

}  // namespace siap
