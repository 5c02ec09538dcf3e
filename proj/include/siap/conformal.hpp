#pragma once

#include <vector>

#include "siap/matrix_core.hpp"
#include "siap/types.hpp"

namespace siap {

/// Absolute calibration residuals grouped by row, one list per family.
struct ResidualFamilies {
  std::vector<std::vector<double>> downtime;   // from cal_downtime
  std::vector<std::vector<double>> scattered;  // from cal_scattered
};

/// R_ij = |X_ij - Xhat_ij| over both calibration sets. Every calibration
/// cell must be observed in `x`.
ResidualFamilies calibration_residuals(const MaskedMatrix& x, const Matrix& x_hat,
                                       const CalibrationSplit& split);

/// 1-based order-statistic index ceil((1 - alpha)(n + 1)); values above n
/// mean the +infinity atom is selected.
Index conformal_rank(Index n, double alpha);

/// (1 - alpha) quantile of sum_i delta_{R_i}/(n+1) + delta_{inf}/(n+1).
/// An empty list gives +infinity.
double conformal_quantile(std::vector<double> residuals, double alpha);

struct RowQuantiles {
  Vector q_sc;
  Vector q_dt;
  double alpha = 0.05;
  std::vector<Index> n_cal_sc;
  std::vector<Index> n_cal_dt;
};

RowQuantiles row_quantiles(const ResidualFamilies& residuals, double alpha);

/// Per-cell interval family (which quantile was applied).
enum class TestKind : int { None = -1, Scattered = 0, Downtime = 1 };

struct IntervalEstimate {
  Matrix x_hat;
  Matrix lower;  // NaN off the test set
  Matrix upper;
  Eigen::ArrayXXi kind;  // TestKind codes
  double alpha = 0.05;
};

/// Intervals on every cell the pattern marks missing: downtime cells get
/// +-q_dt(i), scattered cells +-q_sc(i). With a split, scattered cells that sit
/// in a calibration-downtime column were reconstructed by Step 2 like downtime
/// cells and take q_dt(i) instead. `test` restricts to a subset when given.
IntervalEstimate build_intervals(const Matrix& x_hat, const MissingnessPattern& pattern,
                                 const RowQuantiles& q, const CalibrationSplit* split = nullptr,
                                 const std::vector<Entry>* test = nullptr);

struct CoverageSummary {
  double overall = kMissing;    // fraction of test cells covered
  double downtime = kMissing;
  double scattered = kMissing;
  Vector per_row;               // NaN for rows without test cells
  Index test_cells = 0;
  Index downtime_cells = 0;
  Index scattered_cells = 0;
};

CoverageSummary coverage(const IntervalEstimate& intervals, const Matrix& truth);
double avg_coverage(const IntervalEstimate& intervals, const Matrix& truth);
Vector avg_coverage_row(const IntervalEstimate& intervals, const Matrix& truth);

}  // namespace siap
