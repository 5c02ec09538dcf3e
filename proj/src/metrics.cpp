#include "siap/metrics.hpp"

#include <cmath>

#include "siap/error.hpp"

namespace siap {

double rae(double estimate, double truth) { return std::abs(estimate - truth) / std::abs(truth); }

ErrorStats mrae(const Matrix& x_hat, const Matrix& truth, const std::vector<Entry>& cells) {
  if (x_hat.rows() != truth.rows() || x_hat.cols() != truth.cols()) {
    throw DimensionError("mrae: estimate and truth shapes differ");
  }
  ErrorStats s;
  double sum = 0.0;
  for (const Entry& e : cells) {
    const double t = truth(e.row, e.col);
    if (t == 0.0) {
      ++s.excluded;
      continue;
    }
    sum += rae(x_hat(e.row, e.col), t);
    ++s.count;
  }
  if (s.count > 0) s.mrae = sum / static_cast<double>(s.count);
  return s;
}

double mrae_margin(double method_mrae, double baseline_mrae) { return baseline_mrae - method_mrae; }

double relative_mrae_margin(double method_mrae, double baseline_mrae) {
  return (baseline_mrae - method_mrae) / baseline_mrae;
}

MeanSe mean_se(const std::vector<double>& values) {
  MeanSe out;
  double sum = 0.0;
  for (const double v : values) {
    if (std::isnan(v)) continue;
    sum += v;
    ++out.count;
  }
  if (out.count == 0) return out;
  out.mean = sum / static_cast<double>(out.count);
  if (out.count < 2) return out;
  double ss = 0.0;
  for (const double v : values) {
    if (!std::isnan(v)) ss += (v - out.mean) * (v - out.mean);
  }
  out.se = std::sqrt(ss / static_cast<double>(out.count - 1) / static_cast<double>(out.count));
  return out;
}

}  // namespace siap
