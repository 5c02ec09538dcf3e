#include "siap/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <spdlog/spdlog.h>

#include "siap/error.hpp"

namespace siap {

ResidualFamilies calibration_residuals(const MaskedMatrix& x, const Matrix& x_hat,
                                       const CalibrationSplit& split) {
  if (x_hat.rows() != x.rows() || x_hat.cols() != x.cols()) {
    throw DimensionError("calibration_residuals: estimate shape mismatch");
  }
  ResidualFamilies out;
  out.downtime.resize(static_cast<std::size_t>(x.rows()));
  out.scattered.resize(static_cast<std::size_t>(x.rows()));
  auto collect = [&](const std::vector<Entry>& cells, std::vector<std::vector<double>>& dest) {
    for (const Entry& e : cells) {
      if (e.row < 0 || e.row >= x.rows() || e.col < 0 || e.col >= x.cols()) {
        throw DimensionError("calibration_residuals: calibration cell out of range");
      }
      if (!x.observed(e.row, e.col)) {
        throw InputError("calibration_residuals: calibration cell (" + std::to_string(e.row) + ", " +
                         std::to_string(e.col) + ") is missing in the data");
      }
      dest[static_cast<std::size_t>(e.row)].push_back(std::abs(x(e.row, e.col) - x_hat(e.row, e.col)));
    }
  };
  collect(split.cal_downtime, out.downtime);
  collect(split.cal_scattered, out.scattered);
  return out;
}

Index conformal_rank(Index n, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("conformal quantile: alpha must lie in (0, 1)");
  const double target = (1.0 - alpha) * static_cast<double>(n + 1);
  // (1 - alpha)(n + 1) landing on an integer can come out a few ulps high.
  const double nearest = std::round(target);
  if (std::abs(target - nearest) <= 1e-9 * std::max(1.0, target)) return static_cast<Index>(nearest);
  return static_cast<Index>(std::ceil(target));
}

double conformal_quantile(std::vector<double> residuals, double alpha) {
  const auto n = static_cast<Index>(residuals.size());
  const Index k = conformal_rank(n, alpha);
  if (n == 0 || k > n) return kInf;
  if (k <= 0) return residuals.empty() ? kInf : *std::min_element(residuals.begin(), residuals.end());
  auto kth = residuals.begin() + (k - 1);
  std::nth_element(residuals.begin(), kth, residuals.end());
  return *kth;
}

RowQuantiles row_quantiles(const ResidualFamilies& residuals, double alpha) {
  const auto m = static_cast<Index>(residuals.scattered.size());
  if (static_cast<Index>(residuals.downtime.size()) != m) {
    throw DimensionError("row_quantiles: residual families disagree on the row count");
  }
  RowQuantiles q;
  q.alpha = alpha;
  q.q_sc.resize(m);
  q.q_dt.resize(m);
  q.n_cal_sc.resize(static_cast<std::size_t>(m));
  q.n_cal_dt.resize(static_cast<std::size_t>(m));
  Index empty_sc = 0;
  Index empty_dt = 0;
  for (Index i = 0; i < m; ++i) {
    const auto& sc = residuals.scattered[static_cast<std::size_t>(i)];
    const auto& dt = residuals.downtime[static_cast<std::size_t>(i)];
    q.n_cal_sc[static_cast<std::size_t>(i)] = static_cast<Index>(sc.size());
    q.n_cal_dt[static_cast<std::size_t>(i)] = static_cast<Index>(dt.size());
    empty_sc += sc.empty() ? 1 : 0;
    empty_dt += dt.empty() ? 1 : 0;
    q.q_sc(i) = conformal_quantile(sc, alpha);
    q.q_dt(i) = conformal_quantile(dt, alpha);
  }
  if (empty_sc > 0 || empty_dt > 0) {
    spdlog::warn("row_quantiles: {} rows without scattered and {} rows without downtime calibration "
                 "residuals get infinite intervals",
                 empty_sc, empty_dt);
  }
  return q;
}

IntervalEstimate build_intervals(const Matrix& x_hat, const MissingnessPattern& pattern,
                                 const RowQuantiles& q, const CalibrationSplit* split,
                                 const std::vector<Entry>* test) {
  const Index m = x_hat.rows();
  const Index n = x_hat.cols();
  if (pattern.rows != m || pattern.cols != n) throw DimensionError("build_intervals: pattern shape mismatch");
  if (q.q_sc.size() != m || q.q_dt.size() != m) throw DimensionError("build_intervals: quantile length mismatch");
  IntervalEstimate out;
  out.x_hat = x_hat;
  out.alpha = q.alpha;
  out.lower = Matrix::Constant(m, n, kMissing);
  out.upper = Matrix::Constant(m, n, kMissing);
  out.kind = Eigen::ArrayXXi::Constant(m, n, static_cast<int>(TestKind::None));

  const std::vector<bool> downtime = pattern.downtime_flags();
  std::vector<bool> held_out(static_cast<std::size_t>(n), false);
  if (split) {
    for (const Index j : split->cal_downtime_cols) {
      if (j < 0 || j >= n) throw DimensionError("build_intervals: calibration column out of range");
      held_out[static_cast<std::size_t>(j)] = true;
    }
  }
  Mask scattered = Mask::Constant(m, n, false);
  for (const Entry& e : pattern.scattered) scattered(e.row, e.col) = true;

  auto place = [&](Index i, Index j) {
    double half = 0.0;
    TestKind kind = TestKind::None;
    if (downtime[static_cast<std::size_t>(j)] || (held_out[static_cast<std::size_t>(j)] && scattered(i, j))) {
      half = q.q_dt(i);
      kind = TestKind::Downtime;
    } else if (scattered(i, j)) {
      half = q.q_sc(i);
      kind = TestKind::Scattered;
    } else {
      throw ClassificationError("build_intervals: cell (" + std::to_string(i) + ", " + std::to_string(j) +
                                ") is neither downtime nor scattered-missing");
    }
    out.lower(i, j) = x_hat(i, j) - half;
    out.upper(i, j) = x_hat(i, j) + half;
    out.kind(i, j) = static_cast<int>(kind);
  };

  if (test) {
    for (const Entry& e : *test) {
      if (e.row < 0 || e.row >= m || e.col < 0 || e.col >= n) {
        throw DimensionError("build_intervals: test cell out of range");
      }
      place(e.row, e.col);
    }
  } else {
    for (const Index j : pattern.downtime_cols) {
      for (Index i = 0; i < m; ++i) place(i, j);
    }
    for (const Entry& e : pattern.scattered) place(e.row, e.col);
  }
  return out;
}

CoverageSummary coverage(const IntervalEstimate& intervals, const Matrix& truth) {
  const Index m = truth.rows();
  const Index n = truth.cols();
  if (intervals.x_hat.rows() != m || intervals.x_hat.cols() != n) {
    throw DimensionError("coverage: truth shape mismatch");
  }
  CoverageSummary s;
  Vector hits = Vector::Zero(m);
  Vector counts = Vector::Zero(m);
  Index covered_dt = 0;
  Index covered_sc = 0;
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < m; ++i) {
      const auto kind = static_cast<TestKind>(intervals.kind(i, j));
      if (kind == TestKind::None) continue;
      const bool in = truth(i, j) >= intervals.lower(i, j) && truth(i, j) <= intervals.upper(i, j);
      counts(i) += 1.0;
      hits(i) += in ? 1.0 : 0.0;
      if (kind == TestKind::Downtime) {
        ++s.downtime_cells;
        covered_dt += in ? 1 : 0;
      } else {
        ++s.scattered_cells;
        covered_sc += in ? 1 : 0;
      }
    }
  }
  s.test_cells = s.downtime_cells + s.scattered_cells;
  s.per_row.resize(m);
  for (Index i = 0; i < m; ++i) s.per_row(i) = counts(i) > 0 ? hits(i) / counts(i) : kMissing;
  if (s.test_cells > 0) s.overall = static_cast<double>(covered_dt + covered_sc) / static_cast<double>(s.test_cells);
  if (s.downtime_cells > 0) s.downtime = static_cast<double>(covered_dt) / static_cast<double>(s.downtime_cells);
  if (s.scattered_cells > 0) s.scattered = static_cast<double>(covered_sc) / static_cast<double>(s.scattered_cells);
  return s;
}

double avg_coverage(const IntervalEstimate& intervals, const Matrix& truth) {
  return coverage(intervals, truth).overall;
}

Vector avg_coverage_row(const IntervalEstimate& intervals, const Matrix& truth) {
  return coverage(intervals, truth).per_row;
}

}  // namespace siap
