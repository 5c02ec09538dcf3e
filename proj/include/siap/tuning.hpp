#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "siap/matrix_core.hpp"
#include "siap/spline_basis.hpp"
#include "siap/step1.hpp"
#include "siap/step2.hpp"

namespace siap {

/// Grid search result; scores are mean held-out MRAE per grid value.
struct CvPath {
  std::vector<double> grid;
  std::vector<double> score;
  std::vector<std::vector<double>> fold_scores;  // [grid][fold], NaN for skipped folds
  double best = kMissing;
  int folds_used = 0;
};

struct CvOptions {
  int folds = 10;
  std::uint64_t seed = 1;
};

/// lambda for the observed-space fit: observed cells are dealt into folds,
/// each fold is held out in turn and scored by scattered MRAE. The held-out
/// fit is spline detrending plus SoftImpute (`use_step1` switches to the full
/// Step-1 model).
CvPath tune_lambda_cv(const MaskedMatrix& x, const PeriodicBasis& basis, const std::vector<double>& grid,
                      const CvOptions& cv, const Step1Hyper& base, bool use_step1 = false);

/// lambda1 = lambda2 by column folds over the observed columns of x1 with
/// the AR term off, scored by MRAE on the held-out columns. `score_mask`
/// (cells originally observed) limits scoring; defaults to x1's mask.
CvPath tune_lambda12_cv(const MaskedMatrix& x1, const PeriodicBasis& basis, const std::vector<double>& grid,
                        const CvOptions& cv, const Step2Hyper& base, const Mask* score_mask = nullptr);

/// alpha by the same column-fold CV with lambda1, lambda2, p from `base`.
CvPath tune_alpha_cv(const MaskedMatrix& x1, const PeriodicBasis& basis, const std::vector<double>& grid,
                     const CvOptions& cv, const Step2Hyper& base, const Mask* score_mask = nullptr);

struct BicPath {
  std::vector<Index> orders;
  std::vector<double> bic;
  Index best = 0;
  Index windows = 0;  // common sample size
};

/// Sum over latent coordinates of independent AR(p) BICs,
///   N log(RSS_k / N) + p log N,
/// for p = 0..p_max, all fitted on the same windows of p_max + 1
/// consecutive non-downtime columns.
BicPath select_p_bic(const Matrix& series, Index p_max, const std::vector<bool>& downtime = {});

/// The sequential procedure: lambda, then Step 1 and lambda1 = lambda2,
/// then p by BIC on the detrended latents, then alpha.
struct TuneGrids {
  std::vector<double> lambda = {1, 2, 5, 10, 20};
  std::vector<double> lambda12 = {1, 3, 8, 20};
  std::vector<double> alpha = {0.3, 1, 3, 10, 30};
  Index p_max = 6;
};

struct TuneResult {
  CvPath lambda;
  CvPath lambda12;
  BicPath p;
  CvPath alpha;
  double lambda_best = kMissing;
  double lambda12_best = kMissing;
  Index p_best = 0;
  double alpha_best = kMissing;
};

TuneResult tune_pipeline(const MaskedMatrix& x, const PeriodicBasis& basis, const TuneGrids& grids,
                         const CvOptions& cv, const Step1Hyper& step1, const Step2Hyper& step2);

}  // namespace siap
