#pragma once

#include <vector>

#include "siap/types.hpp"

namespace siap {

struct ErrorStats {
  double mrae = kMissing;  // NaN when no usable cell
  Index count = 0;         // cells averaged
  Index excluded = 0;      // cells dropped because the truth is exactly zero
};

/// |Xhat_ij - X_ij| / |X_ij|.
double rae(double estimate, double truth);

/// Mean RAE over `cells`; zero-truth cells are excluded and counted.
ErrorStats mrae(const Matrix& x_hat, const Matrix& truth, const std::vector<Entry>& cells);

/// MRAE(baseline) - MRAE(method).
double mrae_margin(double method_mrae, double baseline_mrae);
/// (MRAE(baseline) - MRAE(method)) / MRAE(baseline).
double relative_mrae_margin(double method_mrae, double baseline_mrae);

/// Mean and standard error (NaN SE for fewer than two values; NaN entries skipped).
struct MeanSe {
  double mean = kMissing;
  double se = kMissing;
  Index count = 0;
};
MeanSe mean_se(const std::vector<double>& values);

}  // namespace siap
