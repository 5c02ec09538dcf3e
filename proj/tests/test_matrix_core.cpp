#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "siap/error.hpp"
#include "siap/matrix_core.hpp"
#include "support.hpp"

using namespace siap;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "siap_tests";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("projection of a 2x2 ones matrix onto a single cell") {
  Mask omega = Mask::Constant(2, 2, false);
  omega(0, 0) = true;
  const Matrix p = project_observed(omega, Matrix::Ones(2, 2));
  CHECK(p(0, 0) == 1.0);
  CHECK(p(0, 1) == 0.0);
  CHECK(p(1, 0) == 0.0);
  CHECK(p(1, 1) == 0.0);
}

TEST_CASE("projection identities on random masks") {
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix z = test::random_matrix(5, 5, rng);
    const Mask omega = test::random_mask(5, 5, 0.4, rng);
    const Matrix p = project_observed(omega, z);
    const Matrix q = project_unobserved(omega, z);
    CHECK((p + q - z).cwiseAbs().maxCoeff() == 0.0);
    CHECK((project_observed(omega, p) - p).cwiseAbs().maxCoeff() == 0.0);
    CHECK(std::abs(z.squaredNorm() - p.squaredNorm() - q.squaredNorm()) <= 1e-12 * z.squaredNorm());
  }
  const Matrix z = test::random_matrix(4, 3, rng);
  CHECK((project_observed(Mask::Constant(4, 3, true), z) - z).norm() == 0.0);
  CHECK_THROWS_AS(project_observed(Mask::Constant(3, 3, true), z), DimensionError);
}

TEST_CASE("masked matrix never reads unobserved values") {
  Matrix v = Matrix::Ones(3, 3);
  v(1, 1) = kMissing;
  const MaskedMatrix x = MaskedMatrix::from_nan(v);
  CHECK_FALSE(x.observed(1, 1));
  CHECK(x.observed_count() == 8);
  CHECK(x.zero_filled()(1, 1) == 0.0);
  Mask bad = Mask::Constant(3, 3, true);
  CHECK_THROWS_AS(MaskedMatrix(v, bad), InputError);
}

TEST_CASE("mixed missingness sampling") {
  SUBCASE("no missingness gives a full mask") {
    const auto pat = sample_mixed_missingness(4, 6, 0.0, 0.0, 3);
    CHECK(pat.downtime_cols.empty());
    CHECK(pat.scattered.empty());
    CHECK(pat.mask().all());
  }
  SUBCASE("downtime columns are fully missing and scattered cells avoid them") {
    const auto pat = sample_mixed_missingness(30, 80, 0.3, 0.2, 9);
    const Mask mask = pat.mask();
    for (const Index j : pat.downtime_cols) CHECK(mask.col(j).count() == 0);
    const auto flags = pat.downtime_flags();
    for (const Entry& e : pat.scattered) CHECK_FALSE(flags[static_cast<std::size_t>(e.col)]);
    CHECK(std::is_sorted(pat.downtime_cols.begin(), pat.downtime_cols.end()));
  }
  SUBCASE("same seed, same pattern") {
    const auto a = sample_mixed_missingness(20, 40, 0.2, 0.1, 5);
    const auto b = sample_mixed_missingness(20, 40, 0.2, 0.1, 5);
    CHECK(a.downtime_cols == b.downtime_cols);
    CHECK(a.scattered == b.scattered);
  }
  SUBCASE("probabilities outside [0, 1) are rejected") {
    CHECK_THROWS_AS(sample_mixed_missingness(3, 3, 1.0, 0.1, 1), ParameterError);
    CHECK_THROWS_AS(sample_mixed_missingness(3, 3, 0.1, -0.1, 1), ParameterError);
  }
  SUBCASE("downtime rate over 1000 seeds") {
    const Index m = 200, n = 500;
    const double p = 0.1;
    const double band = 3.0 * std::sqrt(p * (1 - p) / n);
    int outside = 0;
    double total = 0.0;
    for (std::uint64_t s = 0; s < 1000; ++s) {
      const auto pat = sample_mixed_missingness(m, n, p, 0.1, s);
      const double frac = static_cast<double>(pat.downtime_cols.size()) / n;
      total += frac;
      if (std::abs(frac - p) > band) ++outside;
    }
    // A 3-sigma band excludes about 0.3% of seeds.
    CHECK(outside <= 10);
    CHECK(std::abs(total / 1000.0 - p) < 3.0 * std::sqrt(p * (1 - p) / (n * 1000.0)));
  }
}

TEST_CASE("calibration split partitions the observed set") {
  Rng rng(21);
  for (int rep = 0; rep < 30; ++rep) {
    const double p1 = rng.uniform() * 0.5;
    const double p2 = rng.uniform() * 0.5;
    const auto pat = sample_mixed_missingness(15, 40, 0.2, 0.2, 100 + rep);
    const MaskedMatrix x = pat.apply(test::random_matrix(15, 40, rng));
    const auto split = split_calibration(x, pat, p1, p2, 7 + rep);
    std::set<std::pair<Index, Index>> seen;
    auto add = [&](const std::vector<Entry>& cells) {
      for (const Entry& e : cells) {
        CHECK(x.observed(e.row, e.col));
        CHECK(seen.insert({e.row, e.col}).second);
      }
    };
    add(split.train);
    add(split.cal_downtime);
    add(split.cal_scattered);
    CHECK(static_cast<Index>(seen.size()) == x.observed_count());
    // Downtime calibration takes whole observed columns.
    std::set<Index> cols(split.cal_downtime_cols.begin(), split.cal_downtime_cols.end());
    Index expected = 0;
    for (const Index j : cols) expected += x.observed_in_col(j);
    CHECK(static_cast<Index>(split.cal_downtime.size()) == expected);
    for (const Entry& e : split.cal_downtime) CHECK(cols.count(e.col) == 1);
  }
  SUBCASE("zero probabilities leave everything in training") {
    const auto pat = sample_mixed_missingness(6, 10, 0.2, 0.2, 4);
    const MaskedMatrix x = pat.apply(Matrix::Ones(6, 10));
    const auto split = split_calibration(x, pat, 0.0, 0.0, 1);
    CHECK(static_cast<Index>(split.train.size()) == x.observed_count());
    CHECK(split.cal_downtime.empty());
    CHECK(split.cal_scattered.empty());
  }
}

TEST_CASE("downtime calibration rate over 500 seeds") {
  const Index m = 100, n = 200;
  const auto pat = sample_mixed_missingness(m, n, 0.1, 0.1, 77);
  const MaskedMatrix x = pat.apply(Matrix::Ones(m, n));
  const double cols = static_cast<double>(n - static_cast<Index>(pat.downtime_cols.size()));
  double total = 0.0;
  for (std::uint64_t s = 0; s < 500; ++s) {
    total += static_cast<double>(split_calibration(x, pat, 0.1, 0.1, s).cal_downtime_cols.size()) / cols;
  }
  const double se = std::sqrt(0.1 * 0.9 / (cols * 500.0));
  CHECK(std::abs(total / 500.0 - 0.1) < 3.0 * se);
}

TEST_CASE("pattern recovered from a mask") {
  const auto pat = sample_mixed_missingness(10, 30, 0.2, 0.2, 8);
  const auto back = pattern_from_mask(pat.mask());
  CHECK(back.downtime_cols == pat.downtime_cols);
  CHECK(back.scattered == pat.scattered);
}

TEST_CASE("csv round trip and malformed input") {
  Matrix v(3, 4);
  v << 1.0 / 3.0, -2.5e-17, 3, 4, 5, 6, 7, 8, 9, 10, 11, 1e300;
  Mask mask = Mask::Constant(3, 4, true);
  mask(0, 2) = false;
  mask(2, 1) = false;
  const MaskedMatrix x(v, mask);
  const fs::path p = scratch("roundtrip.csv");
  store_matrix(x, p);
  const MaskedMatrix y = load_matrix(p);
  CHECK((y.mask() == x.mask()).all());
  for (Index j = 0; j < 4; ++j) {
    for (Index i = 0; i < 3; ++i) {
      if (x.observed(i, j)) CHECK(y(i, j) == x(i, j));
    }
  }
  {
    std::ofstream f(scratch("ragged.csv"));
    f << "1,2,3,4\n1,2,3\n";
  }
  CHECK_THROWS_AS(load_matrix(scratch("ragged.csv")), FormatError);
  {
    std::ofstream f(scratch("text.csv"));
    f << "1,2\nx,4\n";
  }
  CHECK_THROWS_AS(load_matrix(scratch("text.csv")), ParseError);
  {
    std::ofstream f(scratch("nan.csv"));
    f << "1,,NaN\n4,5,6\n";
  }
  const MaskedMatrix z = load_matrix(scratch("nan.csv"));
  CHECK(z.observed_count() == 4);
  CHECK_THROWS_AS(load_matrix(scratch("missing_file.csv")), InputError);
}

TEST_CASE("companion mask file marks extra cells missing") {
  {
    std::ofstream f(scratch("vals.csv"));
    f << "1,2\n3,4\n";
    std::ofstream g(scratch("vals_mask.csv"));
    g << "1,0\n1,1\n";
  }
  const MaskedMatrix x = load_matrix(scratch("vals.csv"), scratch("vals_mask.csv"));
  CHECK(x.observed_count() == 3);
  CHECK_FALSE(x.observed(0, 1));
}
