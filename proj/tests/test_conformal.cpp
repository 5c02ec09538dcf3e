#include <doctest.h>

#include <algorithm>

#include "siap/conformal.hpp"
#include "siap/error.hpp"
#include "support.hpp"

using namespace siap;

namespace {

// Smallest atom v of sum delta_{R_i}/(n+1) + delta_inf/(n+1) whose CDF
// reaches (100 - a)/100, all in integer arithmetic.
double integer_quantile(const std::vector<int>& r, int a) {
  std::vector<int> s = r;
  std::sort(s.begin(), s.end());
  const long n = static_cast<long>(s.size());
  for (const int v : s) {
    const long le = std::count_if(s.begin(), s.end(), [v](int w) { return w <= v; });
    if (100 * le >= (100 - a) * (n + 1)) return v;
  }
  return kInf;
}

}  // namespace

TEST_CASE("conformal quantile against an integer oracle") {
  Rng rng(1);
  for (int size = 0; size <= 20; ++size) {
    for (int a = 1; a <= 99; ++a) {
      for (int rep = 0; rep < 3; ++rep) {
        std::vector<int> r(static_cast<std::size_t>(size));
        for (int& v : r) v = static_cast<int>(rng.below(6));  // plenty of ties
        const std::vector<double> rd(r.begin(), r.end());
        const double alpha = a / 100.0;
        const double got = conformal_quantile(rd, alpha);
        const double want = integer_quantile(r, a);
        CHECK_MESSAGE(got == want, "n=" << size << " a=" << a);
        const Index k = conformal_rank(size, alpha);
        CHECK(k == ((100 - a) * (size + 1) + 99) / 100);
      }
    }
  }
}

TEST_CASE("conformal quantile examples") {
  std::vector<double> nineteen(19);
  for (int i = 0; i < 19; ++i) nineteen[static_cast<std::size_t>(i)] = i + 1.0;
  CHECK(conformal_quantile(nineteen, 0.05) == 19.0);
  nineteen.pop_back();
  CHECK(conformal_quantile(nineteen, 0.05) == kInf);
  CHECK(conformal_quantile({}, 0.5) == kInf);
  CHECK(conformal_quantile({3.0, 1.0, 2.0}, 0.5) == 2.0);  // rank ceil(0.5 * 4) = 2
  CHECK(conformal_rank(99, 0.1) == 90);
}

TEST_CASE("quantile monotonicity") {
  Rng rng(2);
  for (int rep = 0; rep < 200; ++rep) {
    const auto n = static_cast<std::size_t>(1 + rng.below(60));
    std::vector<double> r(n);
    for (double& v : r) v = std::abs(rng.normal());
    double prev = -1.0;
    for (int a = 50; a >= 1; --a) {
      const double q = conformal_quantile(r, a / 100.0);
      CHECK(q >= prev);
      prev = q;
    }
    // Inflating one residual never lowers the quantile.
    std::vector<double> more = r;
    more[rng.below(n)] += 1.0 + rng.uniform();
    CHECK(conformal_quantile(more, 0.2) >= conformal_quantile(r, 0.2));
  }
}

TEST_CASE("calibration residuals and row quantiles") {
  Matrix v(2, 4);
  v << 1, 2, 3, 4,
       5, 6, 7, 8;
  const MaskedMatrix x = MaskedMatrix::fully_observed(v);
  Matrix x_hat = v;
  x_hat(0, 1) = 2.5;
  x_hat(1, 1) = 4.0;
  x_hat(0, 3) = 3.0;
  CalibrationSplit split;
  split.rows = 2;
  split.cols = 4;
  split.cal_downtime = {{0, 1}, {1, 1}};
  split.cal_downtime_cols = {1};
  split.cal_scattered = {{0, 3}};
  const ResidualFamilies fam = calibration_residuals(x, x_hat, split);
  REQUIRE(fam.downtime.size() == 2);
  CHECK(fam.downtime[0] == std::vector<double>{0.5});
  CHECK(fam.downtime[1] == std::vector<double>{2.0});
  CHECK(fam.scattered[0] == std::vector<double>{1.0});
  CHECK(fam.scattered[1].empty());
  const RowQuantiles q = row_quantiles(fam, 0.5);
  CHECK(q.q_dt(0) == 0.5);  // rank ceil(0.5 * 2) = 1
  CHECK(q.q_sc(1) == kInf);
  CHECK(q.n_cal_dt[1] == 1);

  // A calibration cell that is not observed cannot be scored.
  Mask mask = Mask::Constant(2, 4, true);
  mask(0, 3) = false;
  CHECK_THROWS(calibration_residuals(MaskedMatrix(v, mask), x_hat, split));
}

TEST_CASE("interval construction and coverage") {
  const Index m = 3, n = 6;
  Rng rng(3);
  const Matrix x_hat = test::random_matrix(m, n, rng);
  MissingnessPattern pat;
  pat.rows = m;
  pat.cols = n;
  pat.downtime_cols = {2};
  pat.scattered = {{0, 0}, {1, 4}, {2, 5}};
  RowQuantiles q;
  q.alpha = 0.1;
  q.q_sc = Vector::Constant(m, 0.5);
  q.q_dt = Vector::Constant(m, 2.0);
  q.q_dt(2) = kInf;

  const IntervalEstimate iv = build_intervals(x_hat, pat, q);
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < m; ++i) {
      const int kind = iv.kind(i, j);
      const bool sc = std::find_if(pat.scattered.begin(), pat.scattered.end(),
                                   [&](const Entry& e) { return e.row == i && e.col == j; }) != pat.scattered.end();
      if (j == 2) {
        CHECK(kind == static_cast<int>(TestKind::Downtime));
        if (std::isinf(q.q_dt(i))) {
          CHECK(iv.upper(i, j) == kInf);
          CHECK(iv.lower(i, j) == -kInf);
        } else {
          CHECK(iv.upper(i, j) - x_hat(i, j) == doctest::Approx(q.q_dt(i)));
          CHECK(x_hat(i, j) - iv.lower(i, j) == doctest::Approx(q.q_dt(i)));
        }
      } else if (sc) {
        CHECK(kind == static_cast<int>(TestKind::Scattered));
        CHECK(iv.upper(i, j) == doctest::Approx(x_hat(i, j) + 0.5));
        CHECK(iv.lower(i, j) == doctest::Approx(x_hat(i, j) - 0.5));
      } else {
        CHECK(kind == static_cast<int>(TestKind::None));
        CHECK(std::isnan(iv.lower(i, j)));
        CHECK(std::isnan(iv.upper(i, j)));
      }
    }
  }

  // Truth chosen so exactly one scattered cell and downtime row 0 miss.
  Matrix truth = x_hat;
  truth(0, 0) += 0.7;   // scattered, outside
  truth(1, 4) -= 0.49;  // scattered, inside
  truth(2, 5) += 0.5;   // scattered, on the boundary counts as covered
  truth(0, 2) += 3.0;   // downtime, outside
  truth(1, 2) -= 1.0;   // inside
  truth(2, 2) += 1e9;   // infinite interval
  const CoverageSummary c = coverage(iv, truth);
  CHECK(c.test_cells == 6);
  CHECK(c.downtime_cells == 3);
  CHECK(c.scattered_cells == 3);
  CHECK(c.overall == doctest::Approx(4.0 / 6.0));
  CHECK(c.downtime == doctest::Approx(2.0 / 3.0));
  CHECK(c.scattered == doctest::Approx(2.0 / 3.0));
  CHECK(c.per_row(0) == doctest::Approx(0.0));
  CHECK(c.per_row(1) == doctest::Approx(1.0));
  CHECK(c.per_row(2) == doctest::Approx(1.0));
  CHECK(avg_coverage(iv, truth) == doctest::Approx(c.overall));
  CHECK((avg_coverage_row(iv, truth) - c.per_row).norm() < 1e-15);

  SUBCASE("scattered cells in a calibration-downtime column take the downtime quantile") {
    CalibrationSplit split;
    split.rows = m;
    split.cols = n;
    split.cal_downtime_cols = {4};
    const IntervalEstimate iv2 = build_intervals(x_hat, pat, q, &split);
    CHECK(iv2.kind(1, 4) == static_cast<int>(TestKind::Downtime));
    CHECK(iv2.upper(1, 4) == doctest::Approx(x_hat(1, 4) + 2.0));
    CHECK(iv2.kind(0, 0) == static_cast<int>(TestKind::Scattered));
  }
  SUBCASE("restricting to a test subset") {
    const std::vector<Entry> only{{1, 4}};
    const IntervalEstimate iv3 = build_intervals(x_hat, pat, q, nullptr, &only);
    CHECK(iv3.kind(1, 4) == static_cast<int>(TestKind::Scattered));
    CHECK(iv3.kind(0, 0) == static_cast<int>(TestKind::None));
    CHECK(iv3.kind(0, 2) == static_cast<int>(TestKind::None));
  }
  SUBCASE("rows without test cells report NaN") {
    MissingnessPattern one = pat;
    one.downtime_cols.clear();
    one.scattered = {{0, 0}};
    const CoverageSummary c1 = coverage(build_intervals(x_hat, one, q), truth);
    CHECK(std::isnan(c1.per_row(1)));
    CHECK(std::isnan(c1.downtime));
  }
}
