#include "siap/spline_basis.hpp"

#include <cmath>
#include <string>

#include "siap/error.hpp"

namespace siap {

namespace {

// Uniform cubic B-spline pieces on the k-th unit interval of the support,
// k = 0..3, evaluated at local coordinate s in [0, 1).
double piece(int k, double s, int derivative) {
  switch (derivative) {
    case 0:
      switch (k) {
        case 0: return s * s * s / 6.0;
        case 1: return (((-3.0 * s + 3.0) * s + 3.0) * s + 1.0) / 6.0;
        case 2: return ((3.0 * s - 6.0) * s * s + 4.0) / 6.0;
        default: return (1.0 - s) * (1.0 - s) * (1.0 - s) / 6.0;
      }
    case 1:
      switch (k) {
        case 0: return s * s / 2.0;
        case 1: return ((-3.0 * s + 2.0) * s + 1.0) / 2.0;
        case 2: return (3.0 * s - 4.0) * s / 2.0;
        default: return -(1.0 - s) * (1.0 - s) / 2.0;
      }
    case 2:
      switch (k) {
        case 0: return s;
        case 1: return -3.0 * s + 1.0;
        case 2: return 3.0 * s - 2.0;
        default: return 1.0 - s;
      }
    default:
      throw ParameterError("periodic_bspline_row: derivative order must be 0, 1 or 2");
  }
}

bool solve_normal_system(const Matrix& gram, double ridge, Eigen::LLT<Matrix>& chol) {
  Matrix system = gram;
  system.diagonal().array() += ridge;
  chol.compute(system);
  return chol.info() == Eigen::Success && chol.rcond() > 1e-14;
}

}  // namespace

PeriodicBasis PeriodicBasis::subset(std::span<const Index> rows) const {
  PeriodicBasis out;
  out.periods = periods;
  out.knots_per_period = knots_per_period;
  out.phi.resize(static_cast<Index>(rows.size()), phi.cols());
  out.time_grid.reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.phi.row(static_cast<Index>(k)) = phi.row(rows[k]);
    out.time_grid.push_back(time_grid[static_cast<std::size_t>(rows[k])]);
  }
  return out;
}

BasisSpec BasisSpec::ssi_default() { return BasisSpec{{27.0, 365.25}, {8, 6}}; }

PeriodicBasis BasisSpec::build(std::span<const double> grid) const {
  if (periods.empty() || periods.size() != knots.size()) {
    throw ConfigError("basis spec needs matching non-empty period and knot lists");
  }
  std::vector<PeriodicBasis> blocks;
  for (std::size_t k = 0; k < periods.size(); ++k) {
    blocks.push_back(periodic_bspline_basis(periods[k], knots[k], grid));
  }
  return stack_periods(blocks);
}

std::vector<double> index_grid(Index n) {
  std::vector<double> grid(static_cast<std::size_t>(n));
  for (Index t = 0; t < n; ++t) grid[static_cast<std::size_t>(t)] = static_cast<double>(t);
  return grid;
}

Vector periodic_bspline_row(double period, int num_knots, double t, int derivative) {
  if (num_knots < 4) throw ParameterError("periodic B-spline needs at least 4 knots");
  if (!(period > 0.0)) throw ParameterError("period must be positive");
  const double spacing = period / num_knots;
  double u = std::fmod(t / spacing, static_cast<double>(num_knots));
  if (u < 0.0) u += num_knots;
  double cell = std::floor(u);
  double s = u - cell;
  if (cell >= num_knots) {  // u rounded up to num_knots
    cell = 0.0;
    s = 0.0;
  }
  const auto c = static_cast<int>(cell);
  Vector row = Vector::Zero(num_knots);
  const double scale = std::pow(spacing, -derivative);
  for (int k = 0; k < 4; ++k) {
    const int basis_index = ((c - k) % num_knots + num_knots) % num_knots;
    row(basis_index) += piece(k, s, derivative) * scale;
  }
  return row;
}

PeriodicBasis periodic_bspline_basis(double period, int num_knots, std::span<const double> grid) {
  if (num_knots < 4) throw ParameterError("periodic B-spline needs at least 4 knots (cubic order)");
  if (!(period > 0.0)) throw ParameterError("period must be positive");
  if (grid.empty()) throw ParameterError("time grid is empty");
  PeriodicBasis basis;
  basis.periods = {period};
  basis.knots_per_period = {num_knots};
  basis.time_grid.assign(grid.begin(), grid.end());
  basis.phi.resize(static_cast<Index>(grid.size()), num_knots);
  for (std::size_t t = 0; t < grid.size(); ++t) {
    basis.phi.row(static_cast<Index>(t)) = periodic_bspline_row(period, num_knots, grid[t]).transpose();
  }
  return basis;
}

PeriodicBasis stack_periods(std::span<const PeriodicBasis> bases) {
  if (bases.empty()) throw ParameterError("stack_periods: no bases given");
  const PeriodicBasis& first = bases.front();
  Index total = 0;
  for (std::size_t b = 0; b < bases.size(); ++b) {
    if (bases[b].time_grid != first.time_grid) {
      throw DimensionError("stack_periods: bases are evaluated on different time grids");
    }
    total += b == 0 ? bases[b].size() : bases[b].size() - 1;
  }
  PeriodicBasis out;
  out.time_grid = first.time_grid;
  out.phi.resize(first.grid_size(), total);
  Index offset = 0;
  for (std::size_t b = 0; b < bases.size(); ++b) {
    const Index width = b == 0 ? bases[b].size() : bases[b].size() - 1;
    out.phi.middleCols(offset, width) = bases[b].phi.leftCols(width);
    offset += width;
    out.periods.insert(out.periods.end(), bases[b].periods.begin(), bases[b].periods.end());
    out.knots_per_period.insert(out.knots_per_period.end(), bases[b].knots_per_period.begin(),
                                bases[b].knots_per_period.end());
  }
  return out;
}

double default_ridge_guard(const Matrix& phi) {
  const double trace = phi.squaredNorm();  // trace(Phi^T Phi)
  return 1e-8 * trace / static_cast<double>(std::max<Index>(phi.cols(), 1));
}

Matrix spline_fit(const Matrix& y, const PeriodicBasis& basis, double ridge) {
  if (ridge < 0.0) throw ParameterError("spline_fit: ridge must be non-negative");
  if (y.cols() != basis.grid_size()) {
    throw DimensionError("spline_fit: data has " + std::to_string(y.cols()) +
                         " columns but the basis grid has " + std::to_string(basis.grid_size()));
  }
  Eigen::LLT<Matrix> chol;
  if (!solve_normal_system(basis.phi.transpose() * basis.phi, ridge, chol)) {
    throw ConditioningError("spline_fit: normal equations are singular; use a positive ridge");
  }
  return chol.solve(basis.phi.transpose() * y.transpose());
}

SplineProjector::SplineProjector(const Matrix& phi) : phi_(phi) {
  const Matrix gram = phi_.transpose() * phi_;
  if (!solve_normal_system(gram, 0.0, chol_)) {
    ridge_ = default_ridge_guard(phi_);
    if (!solve_normal_system(gram, ridge_, chol_)) {
      throw ConditioningError("spline basis normal equations are singular even with the ridge guard");
    }
  }
}

Matrix SplineProjector::fit_columns(const Matrix& rhs) const {
  if (rhs.rows() != phi_.rows()) throw DimensionError("SplineProjector: row count mismatch");
  return chol_.solve(phi_.transpose() * rhs);
}

Matrix SplineProjector::solve_normal(const Matrix& rhs) const { return chol_.solve(rhs); }

Matrix spline_fit_masked(const MaskedMatrix& y, const PeriodicBasis& basis) {
  if (y.cols() != basis.grid_size()) throw DimensionError("spline_fit_masked: grid size mismatch");
  const Matrix& phi = basis.phi;
  const Index kappa = basis.size();
  const double guard = default_ridge_guard(phi);
  Matrix theta(kappa, y.rows());
  for (Index i = 0; i < y.rows(); ++i) {
    Matrix gram = Matrix::Zero(kappa, kappa);
    Vector rhs = Vector::Zero(kappa);
    for (Index t = 0; t < y.cols(); ++t) {
      if (!y.observed(i, t)) continue;
      gram.selfadjointView<Eigen::Lower>().rankUpdate(phi.row(t).transpose());
      rhs.noalias() += y(i, t) * phi.row(t).transpose();
    }
    gram = gram.selfadjointView<Eigen::Lower>();
    Eigen::LLT<Matrix> chol;
    if (!solve_normal_system(gram, 0.0, chol) && !solve_normal_system(gram, guard, chol)) {
      throw ConditioningError("spline_fit_masked: row " + std::to_string(i) + " cannot be fitted");
    }
    theta.col(i) = chol.solve(rhs);
  }
  return theta;
}

}  // namespace siap
