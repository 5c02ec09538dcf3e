#include <doctest.h>

#include "siap/error.hpp"
#include "siap/spline_basis.hpp"
#include "support.hpp"

using namespace siap;

namespace {

Vector cyclic_shift(const Vector& v, Index by) {
  Vector out(v.size());
  for (Index k = 0; k < v.size(); ++k) out((k + by) % v.size()) = v(k);
  return out;
}

Vector fd_second(double period, int knots, double t, double h) {
  return (periodic_bspline_row(period, knots, t + h) - 2.0 * periodic_bspline_row(period, knots, t) +
          periodic_bspline_row(period, knots, t - h)) /
         (h * h);
}

}  // namespace

TEST_CASE("single-period basis: partition of unity and periodicity") {
  for (const int knots : {4, 6, 8, 13}) {
    const double period = 27.0;
    const auto grid = index_grid(120);
    const PeriodicBasis b = periodic_bspline_basis(period, knots, grid);
    CHECK(b.size() == knots);
    CHECK((b.phi.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    CHECK(b.phi.minCoeff() >= 0.0);
    // Grid is integer; t and t + 27 are both grid points.
    for (Index t = 0; t + 27 < 120; ++t) CHECK((b.phi.row(t) - b.phi.row(t + 27)).cwiseAbs().maxCoeff() < 1e-12);
  }
  // Non-integer period, evaluated directly.
  for (double t = -3.0; t < 10.0; t += 0.37) {
    CHECK((periodic_bspline_row(365.25, 6, t) - periodic_bspline_row(365.25, 6, t + 365.25)).cwiseAbs().maxCoeff() <
          1e-12);
  }
  CHECK_THROWS_AS(periodic_bspline_basis(10.0, 3, index_grid(5)), ParameterError);
}

TEST_CASE("second derivative is continuous across the period seam") {
  for (const int knots : {4, 8}) {
    const double period = 27.0;
    const double spacing = period / knots;
    const double h = 1e-4 * period;
    // The seam is the knot at t = 0. Knots are equally spaced, so the seam
    // must look exactly like the interior knot at t = spacing, shifted by
    // one basis index; the interior one is C2 by construction.
    const Vector seam = fd_second(period, knots, 0.0, h);
    const Vector inner = fd_second(period, knots, spacing, h);
    const double scale = inner.cwiseAbs().maxCoeff();
    CHECK((cyclic_shift(seam, 1) - inner).cwiseAbs().maxCoeff() < 1e-4 * scale);
    // Left and right limits of the analytic second derivative at the seam.
    const Vector left = periodic_bspline_row(period, knots, period - 1e-12, 2);
    const Vector right = periodic_bspline_row(period, knots, 1e-12, 2);
    CHECK((left - right).cwiseAbs().maxCoeff() < 1e-8 * scale);
    // Away from knots the pieces are cubic and central differences are
    // second-order accurate. At a knot f''' jumps, so only O(h) there.
    const double t = 0.3 * spacing;
    CHECK((fd_second(period, knots, t, h) - periodic_bspline_row(period, knots, t, 2)).cwiseAbs().maxCoeff() <
          1e-6 * scale);
    const Vector fd1 = (periodic_bspline_row(period, knots, t + h) - periodic_bspline_row(period, knots, t - h)) / (2 * h);
    CHECK((fd1 - periodic_bspline_row(period, knots, t, 1)).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("stacking periods") {
  const auto grid = index_grid(500);
  const PeriodicBasis a = periodic_bspline_basis(27.0, 8, grid);
  const PeriodicBasis b = periodic_bspline_basis(365.25, 8, grid);
  const std::vector<PeriodicBasis> one{a};
  CHECK((stack_periods(one).phi - a.phi).norm() == 0.0);
  const std::vector<PeriodicBasis> two{a, b};
  const PeriodicBasis s = stack_periods(two);
  CHECK(s.size() == 15);
  const PeriodicBasis def = BasisSpec::ssi_default().build(grid);
  CHECK(def.size() == 8 + 6 - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(def.phi.transpose() * def.phi);
  const double cond = eig.eigenvalues().maxCoeff() / eig.eigenvalues().minCoeff();
  CHECK(eig.eigenvalues().minCoeff() > 0.0);
  CHECK(cond < 1e10);
  const PeriodicBasis other = periodic_bspline_basis(27.0, 8, index_grid(400));
  const std::vector<PeriodicBasis> bad{a, other};
  CHECK_THROWS_AS(stack_periods(bad), DimensionError);
}

TEST_CASE("spline least squares") {
  Rng rng(5);
  const PeriodicBasis basis = BasisSpec::ssi_default().build(index_grid(300));
  const Index kappa = basis.size();
  SUBCASE("exact model recovery and zero data") {
    const Matrix theta = test::random_matrix(kappa, 4, rng);
    const Matrix y = theta.transpose() * basis.phi.transpose();
    CHECK(test::rel_diff(spline_fit(y, basis, 0.0), theta) < 1e-8);
    CHECK(spline_fit(Matrix::Zero(3, 300), basis, 0.0).norm() == 0.0);
  }
  SUBCASE("residual is orthogonal to the basis") {
    const Matrix y = test::random_matrix(5, 300, rng);
    const Matrix th = spline_fit(y, basis, 0.0);
    const Matrix grad = basis.phi.transpose() * (y.transpose() - basis.phi * th);
    CHECK(grad.cwiseAbs().maxCoeff() < 1e-8 * y.norm());
    auto objective = [&](const Matrix& t) { return (y.transpose() - basis.phi * t).squaredNorm(); };
    const double best = objective(th);
    for (int k = 0; k < 20; ++k) {
      Matrix d = test::random_matrix(kappa, 5, rng);
      d *= 1e-3 / d.norm();
      CHECK(objective(th + d) >= best);
    }
  }
  SUBCASE("fitted values are invariant under reparameterisation") {
    const Matrix y = test::random_matrix(3, 300, rng);
    const Matrix r = test::random_matrix(kappa, kappa, rng) + 3.0 * Matrix::Identity(kappa, kappa);
    PeriodicBasis rotated = basis;
    rotated.phi = basis.phi * r;
    const Matrix f1 = basis.phi * spline_fit(y, basis, 0.0);
    const Matrix f2 = rotated.phi * spline_fit(y, rotated, 0.0);
    CHECK(test::rel_diff(f1, f2) < 1e-8);
  }
  SUBCASE("singular normal equations need a ridge") {
    const PeriodicBasis tiny = periodic_bspline_basis(27.0, 8, index_grid(3));
    CHECK_THROWS_AS(spline_fit(Matrix::Ones(1, 3), tiny, 0.0), ConditioningError);
    CHECK_NOTHROW(spline_fit(Matrix::Ones(1, 3), tiny, default_ridge_guard(tiny.phi)));
  }
  SUBCASE("projector matches spline_fit and the masked fit skips missing cells") {
    const Matrix y = test::random_matrix(4, 300, rng);
    const SplineProjector proj(basis.phi);
    CHECK(test::rel_diff(proj.fit_columns(y.transpose()), spline_fit(y, basis, 0.0)) < 1e-10);
    const Mask all = Mask::Constant(4, 300, true);
    CHECK(test::rel_diff(spline_fit_masked(MaskedMatrix(y, all), basis), spline_fit(y, basis, 0.0)) < 1e-10);
    Mask part = test::random_mask(4, 300, 0.3, rng);
    Matrix corrupted = y;
    for (Index j = 0; j < 300; ++j) {
      for (Index i = 0; i < 4; ++i) {
        if (!part(i, j)) corrupted(i, j) = 1e6;
      }
    }
    const Matrix th = spline_fit_masked(MaskedMatrix(corrupted, part), basis);
    for (Index i = 0; i < 4; ++i) {
      std::vector<Index> obs;
      for (Index j = 0; j < 300; ++j) {
        if (part(i, j)) obs.push_back(j);
      }
      const PeriodicBasis sub = basis.subset(obs);
      const Matrix yi = test::select_rows(y.row(i).transpose(), obs).transpose();
      CHECK(test::rel_diff(th.col(i), spline_fit(yi, sub, 0.0)) < 1e-8);
    }
  }
}
