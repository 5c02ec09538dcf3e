#include "siap/matrix_core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include "siap/error.hpp"
#include "siap/rng.hpp"

namespace siap {

namespace {

std::string shape_str(Index r, Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

void require_same_shape(Index r1, Index c1, Index r2, Index c2, const char* what) {
  if (r1 != r2 || c1 != c2) {
    throw DimensionError(std::string(what) + ": shape " + shape_str(r1, c1) + " vs " +
                         shape_str(r2, c2));
  }
}

void require_probability(double p, const char* name) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ParameterError(std::string(name) + " must lie in [0, 1), got " + std::to_string(p));
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool is_missing_token(std::string_view s) {
  return s.empty() || s == "NaN" || s == "nan" || s == "NAN" || s == "NA";
}

std::vector<std::vector<std::string>> read_csv_fields(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::string_view view = trim(line);
    if (view.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = view.find(',', start);
      fields.emplace_back(trim(view.substr(start, comma - start)));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (!rows.empty() && fields.size() != rows.front().size()) {
      throw FormatError(path.string() + ": line " + std::to_string(rows.size() + 1) + " has " +
                        std::to_string(fields.size()) + " fields, expected " +
                        std::to_string(rows.front().size()));
    }
    rows.push_back(std::move(fields));
  }
  if (rows.empty()) throw FormatError(path.string() + ": empty matrix file");
  return rows;
}

double parse_double(const std::string& field, const std::filesystem::path& path, std::size_t line,
                    std::size_t col) {
  double value = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (!field.empty() && field.front() == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw ParseError(path.string() + ": non-numeric field '" + field + "' at line " +
                     std::to_string(line + 1) + ", column " + std::to_string(col + 1));
  }
  return value;
}

void write_double(std::ostream& out, double v) {
  if (std::isnan(v)) {
    out << "NaN";
  } else if (std::isinf(v)) {
    out << (v > 0 ? "inf" : "-inf");
  } else {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf;
  }
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

}  // namespace

MaskedMatrix::MaskedMatrix(Matrix values, Mask mask) : values_(std::move(values)), mask_(std::move(mask)) {
  require_same_shape(values_.rows(), values_.cols(), mask_.rows(), mask_.cols(), "MaskedMatrix");
  for (Index j = 0; j < values_.cols(); ++j) {
    for (Index i = 0; i < values_.rows(); ++i) {
      if (mask_(i, j)) {
        if (!std::isfinite(values_(i, j))) {
          throw InputError("observed entry (" + std::to_string(i) + ", " + std::to_string(j) +
                           ") is not finite");
        }
      } else {
        values_(i, j) = kMissing;
      }
    }
  }
}

MaskedMatrix MaskedMatrix::fully_observed(Matrix values) {
  Mask mask = Mask::Constant(values.rows(), values.cols(), true);
  return MaskedMatrix(std::move(values), std::move(mask));
}

MaskedMatrix MaskedMatrix::from_nan(Matrix values) {
  Mask mask = values.array().isNaN() == false;
  return MaskedMatrix(std::move(values), std::move(mask));
}

std::vector<Index> MaskedMatrix::empty_columns() const {
  std::vector<Index> out;
  for (Index j = 0; j < cols(); ++j) {
    if (!mask_.col(j).any()) out.push_back(j);
  }
  return out;
}

std::vector<Index> MaskedMatrix::empty_rows() const {
  std::vector<Index> out;
  for (Index i = 0; i < rows(); ++i) {
    if (!mask_.row(i).any()) out.push_back(i);
  }
  return out;
}

Matrix MaskedMatrix::zero_filled() const { return mask_.select(values_, 0.0); }

MaskedMatrix MaskedMatrix::restricted(const Mask& keep) const {
  require_same_shape(rows(), cols(), keep.rows(), keep.cols(), "restricted");
  if ((keep && !mask_).any()) throw InputError("restricted: mask is not a subset of the observed set");
  return MaskedMatrix(values_, keep);
}

Matrix project_observed(const Mask& omega, const Matrix& z) {
  require_same_shape(omega.rows(), omega.cols(), z.rows(), z.cols(), "project_observed");
  return omega.select(z, 0.0);
}

Matrix project_observed(const MaskedMatrix& x, const Matrix& z) { return project_observed(x.mask(), z); }

Matrix project_unobserved(const Mask& omega, const Matrix& z) {
  require_same_shape(omega.rows(), omega.cols(), z.rows(), z.cols(), "project_unobserved");
  return omega.select(Matrix::Zero(z.rows(), z.cols()), z);
}

Matrix project_unobserved(const MaskedMatrix& x, const Matrix& z) {
  return project_unobserved(x.mask(), z);
}

Matrix fill_unobserved(const MaskedMatrix& x, const Matrix& z) {
  require_same_shape(x.rows(), x.cols(), z.rows(), z.cols(), "fill_unobserved");
  return x.mask().select(x.values(), z);
}

Mask MissingnessPattern::mask() const {
  Mask mask = Mask::Constant(rows, cols, true);
  for (Index j : downtime_cols) mask.col(j).setConstant(false);
  for (const Entry& e : scattered) mask(e.row, e.col) = false;
  return mask;
}

MaskedMatrix MissingnessPattern::apply(const Matrix& full) const {
  require_same_shape(rows, cols, full.rows(), full.cols(), "MissingnessPattern::apply");
  return MaskedMatrix(full, mask());
}

std::vector<bool> MissingnessPattern::downtime_flags() const {
  std::vector<bool> flags(static_cast<std::size_t>(cols), false);
  for (Index j : downtime_cols) flags[static_cast<std::size_t>(j)] = true;
  return flags;
}

MissingnessPattern sample_mixed_missingness(Index m, Index n, double p, double p_prime,
                                            std::uint64_t seed) {
  if (m < 1 || n < 1) throw ParameterError("sample_mixed_missingness: m and n must be >= 1");
  require_probability(p, "p");
  require_probability(p_prime, "p_prime");
  MissingnessPattern pattern;
  pattern.rows = m;
  pattern.cols = n;
  pattern.p = p;
  pattern.p_prime = p_prime;
  pattern.seed = seed;
  Rng rng(seed);
  for (Index j = 0; j < n; ++j) {
    if (rng.bernoulli(p)) pattern.downtime_cols.push_back(j);
  }
  // Scattered draws are made for every cell so the scattered stream does
  // not depend on which columns went down (O independent of w).
  Rng scatter_rng(derive_seed(seed, 1));
  auto next_down = pattern.downtime_cols.begin();
  for (Index j = 0; j < n; ++j) {
    const bool down = next_down != pattern.downtime_cols.end() && *next_down == j;
    if (down) ++next_down;
    for (Index i = 0; i < m; ++i) {
      const bool hit = scatter_rng.bernoulli(p_prime);
      if (hit && !down) pattern.scattered.push_back({i, j});
    }
  }
  return pattern;
}

MissingnessPattern pattern_from_mask(const Mask& mask) {
  MissingnessPattern pattern;
  pattern.rows = mask.rows();
  pattern.cols = mask.cols();
  for (Index j = 0; j < mask.cols(); ++j) {
    if (!mask.col(j).any()) {
      pattern.downtime_cols.push_back(j);
      continue;
    }
    for (Index i = 0; i < mask.rows(); ++i) {
      if (!mask(i, j)) pattern.scattered.push_back({i, j});
    }
  }
  return pattern;
}

Mask CalibrationSplit::train_mask() const {
  Mask mask = Mask::Constant(rows, cols, false);
  for (const Entry& e : train) mask(e.row, e.col) = true;
  return mask;
}

CalibrationSplit split_calibration(const MaskedMatrix& x, const MissingnessPattern& pattern,
                                   double p_cal1, double p_cal2, std::uint64_t seed) {
  require_probability(p_cal1, "p_cal1");
  require_probability(p_cal2, "p_cal2");
  if (pattern.rows != 0 || pattern.cols != 0) {
    require_same_shape(x.rows(), x.cols(), pattern.rows, pattern.cols, "split_calibration");
  }
  CalibrationSplit split;
  split.rows = x.rows();
  split.cols = x.cols();
  split.p_cal1 = p_cal1;
  split.p_cal2 = p_cal2;
  split.seed = seed;

  std::vector<bool> downtime(static_cast<std::size_t>(x.cols()), false);
  for (Index j : pattern.downtime_cols) downtime[static_cast<std::size_t>(j)] = true;
  for (Index j : x.empty_columns()) downtime[static_cast<std::size_t>(j)] = true;

  Rng column_rng(seed);
  Rng cell_rng(derive_seed(seed, 1));
  for (Index j = 0; j < x.cols(); ++j) {
    if (downtime[static_cast<std::size_t>(j)]) continue;
    const bool calibration_column = column_rng.bernoulli(p_cal1);
    if (calibration_column) split.cal_downtime_cols.push_back(j);
    for (Index i = 0; i < x.rows(); ++i) {
      if (!x.observed(i, j)) continue;
      if (calibration_column) {
        split.cal_downtime.push_back({i, j});
      } else if (cell_rng.bernoulli(p_cal2)) {
        split.cal_scattered.push_back({i, j});
      } else {
        split.train.push_back({i, j});
      }
    }
  }
  return split;
}

MaskedMatrix load_matrix(const std::filesystem::path& path,
                         const std::optional<std::filesystem::path>& mask_path) {
  const auto fields = read_csv_fields(path);
  const auto m = static_cast<Index>(fields.size());
  const auto n = static_cast<Index>(fields.front().size());
  Matrix values(m, n);
  Mask mask(m, n);
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < n; ++j) {
      const std::string& f = fields[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      if (is_missing_token(f)) {
        values(i, j) = kMissing;
        mask(i, j) = false;
      } else {
        values(i, j) = parse_double(f, path, static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        mask(i, j) = std::isfinite(values(i, j));
      }
    }
  }
  if (mask_path) {
    const auto mask_fields = read_csv_fields(*mask_path);
    if (static_cast<Index>(mask_fields.size()) != m ||
        static_cast<Index>(mask_fields.front().size()) != n) {
      throw DimensionError("mask file " + mask_path->string() + " does not match matrix shape " +
                           shape_str(m, n));
    }
    for (Index i = 0; i < m; ++i) {
      for (Index j = 0; j < n; ++j) {
        const std::string& f = mask_fields[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        if (f == "0") {
          mask(i, j) = false;
        } else if (f != "1") {
          throw ParseError(mask_path->string() + ": mask field must be 0 or 1, got '" + f + "'");
        } else if (!mask(i, j)) {
          throw InputError("mask marks (" + std::to_string(i) + ", " + std::to_string(j) +
                           ") observed but the value is missing");
        }
      }
    }
  }
  return MaskedMatrix(std::move(values), std::move(mask));
}

void store_matrix(const MaskedMatrix& x, const std::filesystem::path& path) {
  store_grid(x.mask().select(x.values(), kMissing), path);
}

void store_grid(const Matrix& grid, const std::filesystem::path& path) {
  auto out = open_output(path);
  for (Index i = 0; i < grid.rows(); ++i) {
    for (Index j = 0; j < grid.cols(); ++j) {
      if (j) out << ',';
      write_double(out, grid(i, j));
    }
    out << '\n';
  }
  if (!out) throw InputError("write failed for " + path.string());
}

void store_mask(const Mask& mask, const std::filesystem::path& path) {
  store_int_grid(mask.cast<int>(), path);
}

void store_int_grid(const Eigen::ArrayXXi& grid, const std::filesystem::path& path) {
  auto out = open_output(path);
  for (Index i = 0; i < grid.rows(); ++i) {
    for (Index j = 0; j < grid.cols(); ++j) {
      if (j) out << ',';
      out << grid(i, j);
    }
    out << '\n';
  }
  if (!out) throw InputError("write failed for " + path.string());
}

}  // namespace siap
