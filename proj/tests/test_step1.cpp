#include <doctest.h>

#include "siap/error.hpp"
#include "siap/metrics.hpp"
#include "siap/step1.hpp"
#include "siap/synthetic.hpp"
#include "support.hpp"

using namespace siap;

namespace {

SpikedCovariance random_cov(Index m, Index rl, Rng& rng) {
  Vector d(m);
  for (Index i = 0; i < m; ++i) d(i) = 0.2 + rng.uniform();
  return SpikedCovariance(d, test::random_matrix(m, rl, rng, 0.8));
}

// Each column keeps at least one observed cell.
Mask column_safe_mask(Index m, Index n, double p, Rng& rng) {
  Mask mask = test::random_mask(m, n, p, rng);
  for (Index j = 0; j < n; ++j) {
    if (mask.col(j).count() == 0) mask(static_cast<Index>(rng.below(static_cast<std::uint64_t>(m))), j) = true;
  }
  return mask;
}

void split_indices(const Mask& mask, Index j, std::vector<Index>& obs, std::vector<Index>& mis) {
  obs.clear();
  mis.clear();
  for (Index i = 0; i < mask.rows(); ++i) (mask(i, j) ? obs : mis).push_back(i);
}

// Analytic block gradients of the expected complete-data loss.
struct SurrogateGrad {
  Matrix a, b, theta;
};

SurrogateGrad surrogate_grad(const CondExpectations& e, const Matrix& a, const Matrix& b, const Matrix& theta,
                             const Matrix& phi, const SpikedCovariance& cov, double lambda) {
  const Matrix w = cov.dense().inverse() * (e.mean - a * b.transpose() - theta.transpose() * phi.transpose());
  return {-2.0 * w * b + 2.0 * lambda * a, -2.0 * w.transpose() * a + 2.0 * lambda * b,
          -2.0 * phi.transpose() * w.transpose()};
}

template <typename F>
Matrix fd_gradient(const Matrix& at, F&& f, double h) {
  Matrix g(at.rows(), at.cols());
  for (Index k = 0; k < at.size(); ++k) {
    Matrix up = at, dn = at;
    up.data()[k] += h;
    dn.data()[k] -= h;
    g.data()[k] = (f(up) - f(dn)) / (2.0 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("spiked covariance: dense agreement up to m = 50") {
  Rng rng(1);
  for (const Index m : {3, 10, 25, 50}) {
    for (const Index rl : {0, 1, 4}) {
      const SpikedCovariance cov = random_cov(m, rl, rng);
      const Matrix dense = Matrix(cov.diag().asDiagonal()) + cov.loadings() * cov.loadings().transpose();
      CHECK((cov.dense() - dense).norm() < 1e-12 * dense.norm());
      const Matrix rhs = test::random_matrix(m, 3, rng);
      CHECK(test::rel_diff(cov.solve(rhs), dense.inverse() * rhs) < 1e-8);
      CHECK(std::abs(cov.log_det() - std::log(dense.determinant())) < 1e-8 * std::max(1.0, std::abs(cov.log_det())));
      if (rl > 0) {
        const Matrix lt = cov.loadings().transpose() * cov.diag().cwiseInverse().asDiagonal() * cov.loadings();
        CHECK(test::rel_diff(cov.latent_cov(), (Matrix::Identity(rl, rl) + lt).inverse()) < 1e-10);
      }
      // Principal submatrix solves on random observed subsets.
      for (int rep = 0; rep < 5; ++rep) {
        std::vector<Index> obs;
        for (Index i = 0; i < m; ++i) {
          if (rng.bernoulli(0.6)) obs.push_back(i);
        }
        if (obs.empty()) obs.push_back(0);
        const Matrix sub = test::select_block(dense, obs, obs);
        const Matrix r = test::random_matrix(static_cast<Index>(obs.size()), 2, rng);
        CHECK(test::rel_diff(woodbury_solve_subset(cov, obs, r), sub.inverse() * r) < 1e-8);
      }
    }
  }
}

TEST_CASE("E-step matches dense block inversion on 100 instances") {
  Rng rng(2);
  for (int rep = 0; rep < 100; ++rep) {
    const Index m = 2 + static_cast<Index>(rng.below(11));  // 2..12
    const Index rl = 1 + static_cast<Index>(rng.below(3));  // 1..3
    const Index n = 6;
    const SpikedCovariance cov = random_cov(m, rl, rng);
    const Matrix sigma = cov.dense();
    const Matrix mu = test::random_matrix(m, n, rng);
    const MaskedMatrix x(test::random_matrix(m, n, rng), column_safe_mask(m, n, 0.4, rng));

    // Joint (x, z) covariance for the latent oracle.
    Matrix joint(m + rl, m + rl);
    joint << sigma, cov.loadings(), cov.loadings().transpose(), Matrix::Identity(rl, rl);

    for (const EStepPath path : {EStepPath::Auto, EStepPath::ObservedCapacitance, EStepPath::MissingDowndate}) {
      const CondExpectations e = estep(x, mu, cov, path);
      double nll = 0.0;
      for (Index j = 0; j < n; ++j) {
        std::vector<Index> obs, mis;
        split_indices(x.mask(), j, obs, mis);
        CHECK(e.missing_rows[static_cast<std::size_t>(j)] == mis);
        const Vector xj = x.values().col(j).unaryExpr([](double v) { return std::isnan(v) ? 0.0 : v; });
        const auto oracle = test::dense_conditional(sigma, mu.col(j), xj, obs, mis);
        for (const Index i : obs) CHECK(e.mean(i, j) == x(i, j));
        for (std::size_t k = 0; k < mis.size(); ++k) {
          CHECK(std::abs(e.mean(mis[k], j) - oracle.mean(static_cast<Index>(k))) < 1e-10);
        }
        if (!mis.empty()) {
          CHECK((e.missing_cov[static_cast<std::size_t>(j)] - oracle.cov).cwiseAbs().maxCoeff() < 1e-10);
          Eigen::SelfAdjointEigenSolver<Matrix> eig(oracle.cov);
          CHECK(eig.eigenvalues().minCoeff() > -1e-12);
        }
        // Second moment assembles mean mean^T plus the conditional covariance.
        Matrix second = e.mean.col(j) * e.mean.col(j).transpose();
        for (std::size_t a = 0; a < mis.size(); ++a) {
          for (std::size_t b = 0; b < mis.size(); ++b) second(mis[a], mis[b]) += oracle.cov(a, b);
        }
        CHECK((e.column_second_moment(j) - second).cwiseAbs().maxCoeff() < 1e-10);
        const Matrix s_oo = test::select_block(sigma, obs, obs);
        Vector r(static_cast<Index>(obs.size()));
        for (std::size_t k = 0; k < obs.size(); ++k) r(static_cast<Index>(k)) = x(obs[k], j) - mu(obs[k], j);
        nll += std::log(s_oo.determinant()) + r.dot(s_oo.inverse() * r);
      }
      CHECK(std::abs(e.neg_loglik - nll) < 1e-9 * std::max(1.0, std::abs(nll)));

      // Latent moments: condition the joint Gaussian on the observed x cells.
      const LatentMoments lm = latent_moments(e, mu, cov);
      Matrix zz = Matrix::Zero(rl, rl);
      Matrix xz = Matrix::Zero(m, rl);
      for (Index j = 0; j < n; ++j) {
        std::vector<Index> obs, mis;
        split_indices(x.mask(), j, obs, mis);
        std::vector<Index> hidden = mis;
        for (Index k = 0; k < rl; ++k) hidden.push_back(m + k);
        Vector full_mu = Vector::Zero(m + rl);
        Vector full_x = Vector::Zero(m + rl);
        for (Index i = 0; i < m; ++i) full_x(i) = x.observed(i, j) ? x(i, j) - mu(i, j) : 0.0;
        const auto c = test::dense_conditional(joint, full_mu, full_x, obs, hidden);
        const Index nm = static_cast<Index>(mis.size());
        const Vector ez = c.mean.tail(rl);
        CHECK((lm.z_mean.col(j) - ez).cwiseAbs().maxCoeff() < 1e-10);
        zz += c.cov.bottomRightCorner(rl, rl) + ez * ez.transpose();
        // E[x~ z^T]: observed rows are fixed, missing rows carry covariance.
        Vector xt = full_x;
        for (Index k = 0; k < nm; ++k) xt(mis[static_cast<std::size_t>(k)]) = c.mean(k);
        Matrix xzj = xt.head(m) * ez.transpose();
        for (Index k = 0; k < nm; ++k) xzj.row(mis[static_cast<std::size_t>(k)]) += c.cov.block(k, nm, 1, rl);
        xz += xzj;
      }
      CHECK((lm.zz_sum - zz).cwiseAbs().maxCoeff() < 1e-9);
      CHECK((lm.xz_sum - xz).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("E-step limiting cases") {
  Rng rng(3);
  const Index m = 8, n = 5;
  const Matrix mu = test::random_matrix(m, n, rng);
  SUBCASE("fully observed columns pass through") {
    const MaskedMatrix x = MaskedMatrix::fully_observed(test::random_matrix(m, n, rng));
    const CondExpectations e = estep(x, mu, random_cov(m, 2, rng));
    CHECK((e.mean - x.values()).norm() == 0.0);
    for (const auto& mr : e.missing_rows) CHECK(mr.empty());
  }
  SUBCASE("a floored uniqueness on a missing row falls back to the capacitance form") {
    const Index rl = 6;
    Vector d = Vector::Constant(m, 1.0);
    d(1) = 1e-10;
    const SpikedCovariance cov(d, test::random_matrix(m, rl, rng));
    Mask mask = Mask::Constant(m, n, true);
    mask(1, 0) = false;
    mask(4, 0) = false;
    const MaskedMatrix x(test::random_matrix(m, n, rng), mask);
    const CondExpectations e_auto = estep(x, mu, cov, EStepPath::Auto);
    const CondExpectations e_cap = estep(x, mu, cov, EStepPath::ObservedCapacitance);
    CHECK(test::rel_diff(e_auto.mean, e_cap.mean) < 1e-10);
    CHECK(test::rel_diff(e_auto.missing_cov[0], e_cap.missing_cov[0]) < 1e-8);
    CHECK(std::isfinite(e_auto.neg_loglik));
  }
  SUBCASE("diagonal covariance: missing cells take the model mean") {
    Vector d = Vector::LinSpaced(m, 0.5, 2.0);
    const SpikedCovariance cov(d, Matrix::Zero(m, 0));
    const MaskedMatrix x(test::random_matrix(m, n, rng), column_safe_mask(m, n, 0.5, rng));
    const CondExpectations e = estep(x, mu, cov);
    for (Index j = 0; j < n; ++j) {
      const auto& mis = e.missing_rows[static_cast<std::size_t>(j)];
      for (std::size_t k = 0; k < mis.size(); ++k) {
        CHECK(e.mean(mis[k], j) == doctest::Approx(mu(mis[k], j)).epsilon(1e-14));
        for (std::size_t l = 0; l < mis.size(); ++l) {
          CHECK(e.missing_cov[static_cast<std::size_t>(j)](k, l) == doctest::Approx(k == l ? d(mis[k]) : 0.0));
        }
      }
    }
  }
}

TEST_CASE("closed-form updates are block minimisers of the expected loss") {
  Rng rng(4);
  const Index m = 6, n = 8, r = 2, rl = 2;
  const PeriodicBasis basis = periodic_bspline_basis(8.0, 4, index_grid(n));
  const Matrix& phi = basis.phi;
  const SpikedCovariance cov = random_cov(m, rl, rng);
  const MaskedMatrix x(test::random_matrix(m, n, rng), column_safe_mask(m, n, 0.3, rng));
  Matrix a = test::random_matrix(m, r, rng), b = test::random_matrix(n, r, rng);
  Matrix theta = test::random_matrix(basis.size(), m, rng);
  const double lam = 0.7;
  const CondExpectations e = estep(x, a * b.transpose() + theta.transpose() * phi.transpose(), cov);

  // The analytic gradient used below agrees with finite differences.
  const SurrogateGrad g0 = surrogate_grad(e, a, b, theta, phi, cov, lam);
  const double h = 1e-6;
  const Matrix fd_b = fd_gradient(b, [&](const Matrix& bb) { return step1_surrogate(e, a, bb, theta, phi, cov, lam); }, h);
  CHECK(test::rel_diff(fd_b, g0.b) < 1e-4);
  const Matrix fd_a = fd_gradient(a, [&](const Matrix& aa) { return step1_surrogate(e, aa, b, theta, phi, cov, lam); }, h);
  CHECK(test::rel_diff(fd_a, g0.a) < 1e-4);
  const Matrix fd_t = fd_gradient(theta, [&](const Matrix& tt) { return step1_surrogate(e, a, b, tt, phi, cov, lam); }, h);
  CHECK(test::rel_diff(fd_t, g0.theta) < 1e-4);

  const Matrix trend = theta.transpose() * phi.transpose();
  b = update_b1(e, a, trend, cov, lam);
  CHECK(surrogate_grad(e, a, b, theta, phi, cov, lam).b.cwiseAbs().maxCoeff() < 1e-7);
  a = update_a1(e, b, trend, cov, lam);
  CHECK(surrogate_grad(e, a, b, theta, phi, cov, lam).a.cwiseAbs().maxCoeff() < 1e-7);
  theta = update_theta1(e, a, b, SplineProjector(phi));
  CHECK(surrogate_grad(e, a, b, theta, phi, cov, lam).theta.cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("update reductions") {
  Rng rng(5);
  const Index m = 7, n = 30, r = 2;
  const PeriodicBasis basis = periodic_bspline_basis(10.0, 5, index_grid(n));
  const MaskedMatrix x = MaskedMatrix::fully_observed(test::random_matrix(m, n, rng));
  const SpikedCovariance identity(Vector::Ones(m), Matrix::Zero(m, 0));
  const Matrix theta = test::random_matrix(basis.size(), m, rng);
  const Matrix trend = theta.transpose() * basis.phi.transpose();
  const Matrix a = test::random_matrix(m, r, rng);
  const CondExpectations e = estep(x, trend, identity);
  SUBCASE("no missing data, L = 0, Lambda = I, lambda = 0 gives plain least squares") {
    const Matrix resid = x.values() - trend;
    const Matrix b = update_b1(e, a, trend, identity, 0.0);
    CHECK(test::rel_diff(b, resid.transpose() * a * (a.transpose() * a).inverse()) < 1e-10);
    const Matrix a2 = update_a1(e, b, trend, identity, 0.0);
    CHECK(test::rel_diff(a2, resid * b * (b.transpose() * b).inverse()) < 1e-10);
  }
  SUBCASE("theta with zero factors is the spline fit of the expectations") {
    const Matrix th = update_theta1(e, Matrix::Zero(m, r), Matrix::Zero(n, r), SplineProjector(basis.phi));
    CHECK(test::rel_diff(th, spline_fit(e.mean, basis, 0.0)) < 1e-10);
  }
}

TEST_CASE("factor-analysis step recovers a known covariance") {
  Rng rng(6);
  const Index m = 10, rl = 2, n = 5000;
  Vector d(m);
  for (Index i = 0; i < m; ++i) d(i) = 0.3 + 0.5 * rng.uniform();
  const Matrix l = test::random_matrix(m, rl, rng);
  const Matrix sigma = Matrix(d.asDiagonal()) + l * l.transpose();
  const Matrix z = test::random_matrix(rl, n, rng);
  Matrix xs = l * z;
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < m; ++i) xs(i, j) += std::sqrt(d(i)) * rng.normal();
  }
  const MaskedMatrix x = MaskedMatrix::fully_observed(xs);
  const Matrix mu = Matrix::Zero(m, n);
  SpikedCovariance cov(Vector::Ones(m), test::random_matrix(m, rl, rng, 0.1));
  for (int it = 0; it < 500; ++it) cov = update_l_lambda(estep(x, mu, cov), mu, cov);
  CHECK(test::rel_diff(cov.dense(), sigma) < 0.05);
  CHECK(cov.diag().minCoeff() > 0.0);
}

TEST_CASE("Step 1 fit") {
  Rng rng(7);
  const PeriodicBasis basis60 = BasisSpec::ssi_default().build(index_grid(60));
  Step1Hyper hyper;
  hyper.rank = 3;
  hyper.cov_rank = 4;
  hyper.max_iter = 40;
  SUBCASE("fully observed input is returned unchanged") {
    const MaskedMatrix x = MaskedMatrix::fully_observed(test::random_matrix(8, 60, rng));
    const Step1Result res = step1_fit(x, basis60, hyper);
    CHECK((res.x1.values() - x.values()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(res.x1.mask().all());
  }
  SUBCASE("observed cells pass through, scattered cells are filled, downtime stays missing") {
    Mask mask = column_safe_mask(8, 60, 0.2, rng);
    mask.col(10).setConstant(false);
    mask.col(11).setConstant(false);
    const MaskedMatrix x(test::random_matrix(8, 60, rng), mask);
    const Step1Result res = step1_fit(x, basis60, hyper);
    for (Index j = 0; j < 60; ++j) {
      for (Index i = 0; i < 8; ++i) {
        if (x.observed(i, j)) CHECK(res.x1(i, j) == x(i, j));
        if (j == 10 || j == 11) CHECK_FALSE(res.x1.observed(i, j));
        else CHECK(res.x1.observed(i, j));
      }
    }
    CHECK(res.model.b.row(10).norm() == 0.0);
    CHECK(res.model.cov.diag().minCoeff() > 0.0);
  }
  SUBCASE("penalised objective is non-increasing") {
    SyntheticSpec spec;
    spec.m = 30;
    spec.n = 60;
    spec.seed = 3;
    const SyntheticData data = generate_synthetic(spec);
    const MaskedMatrix x = sample_mixed_missingness(30, 60, 0.1, 0.2, 4).apply(data.x);
    hyper.cov_rank = 10;
    const Step1Result res = step1_fit(x, basis60, hyper);
    const auto& tr = res.model.trace;
    REQUIRE(tr.size() >= 3);
    const double scale = std::abs(tr.front());
    for (std::size_t k = 1; k < tr.size(); ++k) CHECK((tr[k] - tr[k - 1]) / scale <= 1e-8);
  }
  SUBCASE("rows that are never observed are rejected") {
    Mask mask = Mask::Constant(5, 60, true);
    mask.row(2).setConstant(false);
    const MaskedMatrix x(test::random_matrix(5, 60, rng), mask);
    CHECK_THROWS_AS(step1_fit(x, basis60, hyper), InputError);
  }
}

TEST_CASE("Step 1 beats spline-only imputation of scattered cells") {
  int wins = 0;
  const PeriodicBasis basis = BasisSpec::ssi_default().build(index_grid(200));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SyntheticSpec spec;
    spec.m = 60;
    spec.n = 200;
    spec.seed = 100 + seed;
    const SyntheticData data = generate_synthetic(spec);
    const MissingnessPattern pat = sample_mixed_missingness(60, 200, 0.0, 0.1, 500 + seed);
    const MaskedMatrix x = pat.apply(data.x);
    Step1Hyper hyper;
    const Step1Result res = step1_fit(x, basis, hyper);
    const Matrix spline = spline_fit_masked(x, basis).transpose() * basis.phi.transpose();
    if (mrae(res.x1.values(), data.x, pat.scattered).mrae < mrae(spline, data.x, pat.scattered).mrae) ++wins;
  }
  CHECK(wins >= 18);
}
