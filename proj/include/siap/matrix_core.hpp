#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "siap/types.hpp"

namespace siap {

/// Dense m x n grid with an observation mask (true = observed). Unobserved
/// cells hold a quiet NaN and are never read; the mask is authoritative.
class MaskedMatrix {
 public:
  MaskedMatrix() = default;
  MaskedMatrix(Matrix values, Mask mask);

  static MaskedMatrix fully_observed(Matrix values);
  /// NaN cells become unobserved.
  static MaskedMatrix from_nan(Matrix values);

  Index rows() const { return values_.rows(); }
  Index cols() const { return values_.cols(); }
  const Matrix& values() const { return values_; }
  const Mask& mask() const { return mask_; }
  bool observed(Index i, Index j) const { return mask_(i, j); }
  double operator()(Index i, Index j) const { return values_(i, j); }

  Index observed_count() const { return mask_.count(); }
  Index observed_in_col(Index j) const { return mask_.col(j).count(); }
  Index observed_in_row(Index i) const { return mask_.row(i).count(); }
  bool fully_observed() const { return mask_.all(); }

  /// Columns with no observed entry; on loaded data this is how downtime is
  /// recognised.
  std::vector<Index> empty_columns() const;
  std::vector<Index> empty_rows() const;

  /// P_Omega(X): observed values, zero elsewhere.
  Matrix zero_filled() const;

  /// Same values with a narrower mask; `keep` must be a subset of mask().
  MaskedMatrix restricted(const Mask& keep) const;

 private:
  Matrix values_;
  Mask mask_;
};

/// P_Omega(Z): Z on the observed cells and 0 elsewhere.
Matrix project_observed(const Mask& omega, const Matrix& z);
Matrix project_observed(const MaskedMatrix& x, const Matrix& z);
/// P_Omega^perp(Z): Z off the observed cells and 0 on them.
Matrix project_unobserved(const Mask& omega, const Matrix& z);
Matrix project_unobserved(const MaskedMatrix& x, const Matrix& z);
/// P_Omega(X) + P_Omega^perp(Z), the fill-in surrogate used by every solver.
Matrix fill_unobserved(const MaskedMatrix& x, const Matrix& z);

/// Downtime columns (whole column missing) plus scattered cells in the
/// remaining columns, as drawn under independent Bernoulli mechanisms.
struct MissingnessPattern {
  Index rows = 0;
  Index cols = 0;
  std::vector<Index> downtime_cols;   // sorted
  std::vector<Entry> scattered;       // sorted column-major, none in downtime columns
  double p = 0.0;
  double p_prime = 0.0;
  std::uint64_t seed = 0;

  /// Observation mask induced by the pattern.
  Mask mask() const;
  /// Masks a fully known matrix.
  MaskedMatrix apply(const Matrix& full) const;
  std::vector<bool> downtime_flags() const;
};

MissingnessPattern sample_mixed_missingness(Index m, Index n, double p, double p_prime,
                                            std::uint64_t seed);

/// Recover a pattern from a mask alone: empty columns are downtime, every
/// other missing cell is scattered.
MissingnessPattern pattern_from_mask(const Mask& mask);

/// Partition of Omega into training, downtime-calibration (whole observed
/// columns) and scattered-calibration cells.
struct CalibrationSplit {
  Index rows = 0;
  Index cols = 0;
  std::vector<Entry> train;
  std::vector<Entry> cal_downtime;
  std::vector<Entry> cal_scattered;
  std::vector<Index> cal_downtime_cols;
  double p_cal1 = 0.0;
  double p_cal2 = 0.0;
  std::uint64_t seed = 0;

  Mask train_mask() const;
};

/// Columns listed in `pattern.downtime_cols` or empty in `x` are never
/// drawn for downtime calibration.
CalibrationSplit split_calibration(const MaskedMatrix& x, const MissingnessPattern& pattern,
                                   double p_cal1, double p_cal2, std::uint64_t seed);

/// CSV grid: one row per line, empty field or NaN = missing. An optional
/// companion 0/1 mask of the same shape marks additional cells missing.
MaskedMatrix load_matrix(const std::filesystem::path& path,
                         const std::optional<std::filesystem::path>& mask_path = std::nullopt);
void store_matrix(const MaskedMatrix& x, const std::filesystem::path& path);
void store_mask(const Mask& mask, const std::filesystem::path& path);
/// Writes a plain grid; NaN cells are written as NaN, infinities as inf/-inf.
void store_grid(const Matrix& grid, const std::filesystem::path& path);
void store_int_grid(const Eigen::ArrayXXi& grid, const std::filesystem::path& path);

}  // namespace siap
