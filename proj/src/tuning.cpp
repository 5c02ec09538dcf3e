#include "siap/tuning.hpp"

#include <cmath>
#include <functional>
#include <limits>

#include <spdlog/spdlog.h>

#include "siap/error.hpp"
#include "siap/metrics.hpp"
#include "siap/parallel.hpp"
#include "siap/rng.hpp"
#include "siap/softimpute.hpp"

namespace siap {

namespace {

void require_grid(const std::vector<double>& grid, const char* what) {
  if (grid.empty()) throw ConfigError(std::string(what) + ": grid must not be empty");
}

// Fills path.score / best from fold_scores.
void finish(CvPath& path) {
  path.score.assign(path.grid.size(), kMissing);
  double best_score = std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < path.grid.size(); ++g) {
    path.score[g] = mean_se(path.fold_scores[g]).mean;
    if (!std::isnan(path.score[g]) && path.score[g] < best_score) {
      best_score = path.score[g];
      path.best = path.grid[g];
    }
  }
  if (std::isnan(path.best)) throw InputError("cross-validation: every fold was skipped or failed");
}

// Folds 0..folds-1 assigned by a seeded shuffle of `count` items.
std::vector<int> deal_folds(std::size_t count, int folds, std::uint64_t seed) {
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<int> fold(count);
  for (std::size_t k = 0; k < count; ++k) fold[order[k]] = static_cast<int>(k % static_cast<std::size_t>(folds));
  return fold;
}

CvPath column_fold_cv(const MaskedMatrix& x1, const PeriodicBasis& basis, const std::vector<double>& grid,
                      const CvOptions& cv, const Mask* score_mask, const char* what,
                      const std::function<Step2Hyper(double)>& hyper_for) {
  require_grid(grid, what);
  if (cv.folds < 2) throw ConfigError(std::string(what) + ": folds must be >= 2");
  const Mask& scoring = score_mask ? *score_mask : x1.mask();
  std::vector<Index> cols;
  for (Index j = 0; j < x1.cols(); ++j) {
    if (x1.observed_in_col(j) > 0) cols.push_back(j);
  }
  const std::vector<int> fold = deal_folds(cols.size(), cv.folds, cv.seed);
  CvPath path;
  path.grid = grid;
  path.fold_scores.assign(grid.size(), std::vector<double>(static_cast<std::size_t>(cv.folds), kMissing));
  std::vector<char> fold_used(static_cast<std::size_t>(cv.folds), 0);

  parallel_for(static_cast<std::size_t>(cv.folds) * grid.size(), [&](std::size_t task) {
    const std::size_t f = task / grid.size();
    const std::size_t g = task % grid.size();
    Mask keep = x1.mask();
    std::vector<Entry> held;
    for (std::size_t k = 0; k < cols.size(); ++k) {
      if (fold[k] != static_cast<int>(f)) continue;
      const Index j = cols[k];
      keep.col(j).setConstant(false);
      for (Index i = 0; i < x1.rows(); ++i) {
        if (scoring(i, j) && x1.observed(i, j)) held.push_back({i, j});
      }
    }
    if (held.empty()) return;
    if (g == 0) fold_used[f] = 1;
    try {
      const MaskedMatrix train = x1.restricted(keep);
      const Step2Result fit = step2_fit(train, basis, hyper_for(grid[g]));
      path.fold_scores[g][f] = mrae(fit.imputed.values, x1.values(), held).mrae;
    } catch (const std::exception& e) {
      spdlog::warn("{}: fold {} at {:g} failed: {}", what, f, grid[g], e.what());
    }
  });
  for (std::size_t f = 0; f < fold_used.size(); ++f) {
    if (fold_used[f]) {
      ++path.folds_used;
    } else {
      spdlog::warn("{}: fold {} has no held-out cells and is skipped", what, f);
    }
  }
  finish(path);
  return path;
}

}  // namespace

CvPath tune_lambda_cv(const MaskedMatrix& x, const PeriodicBasis& basis, const std::vector<double>& grid,
                      const CvOptions& cv, const Step1Hyper& base, bool use_step1) {
  require_grid(grid, "tune_lambda_cv");
  if (cv.folds < 2) throw ConfigError("tune_lambda_cv: folds must be >= 2");
  std::vector<Entry> cells;
  for (Index j = 0; j < x.cols(); ++j) {
    for (Index i = 0; i < x.rows(); ++i) {
      if (x.observed(i, j)) cells.push_back({i, j});
    }
  }
  const std::vector<int> fold = deal_folds(cells.size(), cv.folds, cv.seed);
  CvPath path;
  path.grid = grid;
  path.fold_scores.assign(grid.size(), std::vector<double>(static_cast<std::size_t>(cv.folds), kMissing));
  std::vector<char> fold_used(static_cast<std::size_t>(cv.folds), 0);

  parallel_for(static_cast<std::size_t>(cv.folds) * grid.size(), [&](std::size_t task) {
    const std::size_t f = task / grid.size();
    const std::size_t g = task % grid.size();
    Mask keep = x.mask();
    std::vector<Entry> held;
    for (std::size_t k = 0; k < cells.size(); ++k) {
      if (fold[k] == static_cast<int>(f)) {
        keep(cells[k].row, cells[k].col) = false;
        held.push_back(cells[k]);
      }
    }
    if (held.empty()) return;
    if (g == 0) fold_used[f] = 1;
    try {
      const MaskedMatrix train = x.restricted(keep);
      Matrix x_hat;
      if (use_step1) {
        Step1Hyper h = base;
        h.lambda = grid[g];
        const Step1Result s1 = step1_fit(train, basis, h);
        x_hat = fill_unobserved(s1.x1, s1.model.fitted(basis));
      } else {
        const Matrix trend = spline_fit_masked(train, basis).transpose() * basis.phi.transpose();
        SoftImputeOptions o;
        o.rank = base.rank;
        o.lambda = grid[g];
        o.tol = base.init_tol;
        o.max_iter = base.init_max_iter;
        const FactorPair fp = softimpute_als(MaskedMatrix(train.values() - trend, train.mask()), o);
        x_hat = trend + fp.product();
      }
      path.fold_scores[g][f] = mrae(x_hat, x.values(), held).mrae;
    } catch (const std::exception& e) {
      spdlog::warn("tune_lambda_cv: fold {} at {:g} failed: {}", f, grid[g], e.what());
    }
  });
  for (std::size_t f = 0; f < fold_used.size(); ++f) {
    if (fold_used[f]) {
      ++path.folds_used;
    } else {
      spdlog::warn("tune_lambda_cv: fold {} has no held-out cells and is skipped", f);
    }
  }
  finish(path);
  return path;
}

CvPath tune_lambda12_cv(const MaskedMatrix& x1, const PeriodicBasis& basis, const std::vector<double>& grid,
                        const CvOptions& cv, const Step2Hyper& base, const Mask* score_mask) {
  return column_fold_cv(x1, basis, grid, cv, score_mask, "tune_lambda12_cv", [&](double v) {
    Step2Hyper h = base;
    h.lambda1 = v;
    h.lambda2 = v;
    h.alpha = 0.0;
    return h;
  });
}

CvPath tune_alpha_cv(const MaskedMatrix& x1, const PeriodicBasis& basis, const std::vector<double>& grid,
                     const CvOptions& cv, const Step2Hyper& base, const Mask* score_mask) {
  return column_fold_cv(x1, basis, grid, cv, score_mask, "tune_alpha_cv", [&](double v) {
    Step2Hyper h = base;
    h.alpha = v;
    return h;
  });
}

BicPath select_p_bic(const Matrix& series, Index p_max, const std::vector<bool>& downtime) {
  const Index n = series.rows();
  const Index r = series.cols();
  if (p_max < 0) throw ParameterError("select_p_bic: p_max must be >= 0");
  if (!downtime.empty() && static_cast<Index>(downtime.size()) != n) {
    throw DimensionError("select_p_bic: downtime flag count");
  }
  std::vector<Index> ends;  // t with columns t - p_max .. t all usable
  Index run = 0;
  for (Index t = 0; t < n; ++t) {
    const bool down = !downtime.empty() && downtime[static_cast<std::size_t>(t)];
    run = down ? 0 : run + 1;
    if (run >= p_max + 1) ends.push_back(t);
  }
  const auto windows = static_cast<Index>(ends.size());
  if (windows <= p_max) throw ParameterError("select_p_bic: too few complete lag windows for p_max");
  BicPath path;
  path.windows = windows;
  const double nn = static_cast<double>(windows);
  for (Index p = 0; p <= p_max; ++p) {
    double total = 0.0;
    for (Index k = 0; k < r; ++k) {
      double rss = 0.0;
      if (p == 0) {
        for (const Index t : ends) rss += series(t, k) * series(t, k);
      } else {
        Matrix design(windows, p);
        Vector target(windows);
        for (Index w = 0; w < windows; ++w) {
          const Index t = ends[static_cast<std::size_t>(w)];
          target(w) = series(t, k);
          for (Index l = 1; l <= p; ++l) design(w, l - 1) = series(t - l, k);
        }
        const Vector coef = design.colPivHouseholderQr().solve(target);
        rss = (target - design * coef).squaredNorm();
      }
      total += nn * std::log(std::max(rss / nn, 1e-300)) + static_cast<double>(p) * std::log(nn);
    }
    path.orders.push_back(p);
    path.bic.push_back(total);
  }
  Index best = 0;
  for (std::size_t k = 1; k < path.bic.size(); ++k) {
    if (path.bic[k] < path.bic[static_cast<std::size_t>(best)]) best = static_cast<Index>(k);
  }
  path.best = path.orders[static_cast<std::size_t>(best)];
  return path;
}

TuneResult tune_pipeline(const MaskedMatrix& x, const PeriodicBasis& basis, const TuneGrids& grids,
                         const CvOptions& cv, const Step1Hyper& step1, const Step2Hyper& step2) {
  TuneResult out;
  spdlog::info("tune: lambda over {} values", grids.lambda.size());
  out.lambda = tune_lambda_cv(x, basis, grids.lambda, cv, step1);
  out.lambda_best = out.lambda.best;

  Step1Hyper h1 = step1;
  h1.lambda = out.lambda_best;
  const Step1Result s1 = step1_fit(x, basis, h1);

  spdlog::info("tune: lambda1 = lambda2 over {} values", grids.lambda12.size());
  Step2Hyper h2 = step2;
  h2.init_lambda = out.lambda_best;
  out.lambda12 = tune_lambda12_cv(s1.x1, basis, grids.lambda12, cv, h2, &x.mask());
  out.lambda12_best = out.lambda12.best;
  h2.lambda1 = out.lambda12_best;
  h2.lambda2 = out.lambda12_best;

  // Latent series of the AR-free refit.
  Step2Hyper h_free = h2;
  h_free.alpha = 0.0;
  const Step2Result free_fit = step2_fit(s1.x1, basis, h_free);
  std::vector<bool> downtime(static_cast<std::size_t>(x.cols()), false);
  for (const Index j : s1.x1.empty_columns()) downtime[static_cast<std::size_t>(j)] = true;
  const Matrix b_tilde = free_fit.model.b - basis.phi * free_fit.model.theta;
  out.p = select_p_bic(b_tilde, std::min<Index>(grids.p_max, x.cols() / 2), downtime);
  out.p_best = out.p.best;
  h2.p = out.p_best;

  spdlog::info("tune: alpha over {} values with p = {}", grids.alpha.size(), out.p_best);
  out.alpha = tune_alpha_cv(s1.x1, basis, grids.alpha, cv, h2, &x.mask());
  out.alpha_best = out.alpha.best;
  return out;
}

}  // namespace siap
