#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "siap/conformal.hpp"
#include "siap/matrix_core.hpp"
#include "siap/metrics.hpp"
#include "siap/spline_basis.hpp"
#include "siap/step1.hpp"
#include "siap/step2.hpp"
#include "siap/synthetic.hpp"

namespace siap {

/// Module compositions compared in the simulation study, plus the
/// observed-space spline fit used as the margin baseline.
enum class Variant {
  Spline,
  SI,
  SIDetrended,
  SIDetrendedCov,
  SSSIA,
  SSSIADetrended,
  S1SSSIDetrended,
  SIAP,
};

const std::vector<Variant>& all_variants();
std::string variant_name(Variant v);
/// Accepts the display names ("SI detrended w/ cov") and snake_case ids.
Variant parse_variant(const std::string& name);
bool variant_uses_step1(Variant v);

struct VariantHyper {
  Index rank = 10;
  double lambda = 5.0;  // SoftImpute and Step 1
  Step1Hyper step1;
  Step2Hyper step2;
};

/// Point estimate of every cell from training data only.
Matrix fit_variant(Variant v, const MaskedMatrix& train, const PeriodicBasis& basis,
                   const VariantHyper& hyper, const Step1Result* step1 = nullptr);

struct AblationConfig {
  SyntheticSpec data;
  /// Fully observed ground truth replacing the synthetic generator.
  std::optional<Matrix> truth;
  BasisSpec basis = BasisSpec::ssi_default();
  std::vector<Variant> variants = all_variants();
  std::vector<double> missingness = {0.1};  // p0: downtime and scattered probability
  int replicates = 10;
  std::uint64_t seed = 1;
  bool regenerate_data = false;  // fresh synthetic matrix per replicate
  double alpha = 0.05;
  double p_cal1 = 0.1;
  double p_cal2 = 0.1;
  VariantHyper hyper;
};

struct VariantOutcome {
  bool failed = false;
  std::string error;
  ErrorStats downtime;
  ErrorStats scattered;
  CoverageSummary cover;
  double half_width_dt = kMissing;  // mean finite half-width
  double half_width_sc = kMissing;
  double rel_half_width_dt = kMissing;  // mean of q / |Xhat|
  double rel_half_width_sc = kMissing;
  double seconds = 0.0;
};

struct ReplicateOutcome {
  int replicate = 0;
  std::uint64_t seed = 0;
  Index downtime_cols = 0;
  Index scattered_cells = 0;
  std::map<Variant, VariantOutcome> variants;
};

struct VariantSummary {
  MeanSe mrae_dt;
  MeanSe mrae_sc;
  MeanSe rel_margin_dt;  // against the baseline
  MeanSe rel_margin_sc;
  MeanSe margin_dt;
  MeanSe margin_sc;
  MeanSe coverage;
  MeanSe coverage_dt;
  MeanSe coverage_sc;
  Vector row_coverage_mean;
  Vector row_coverage_se;
  MeanSe half_width_dt;
  MeanSe half_width_sc;
  MeanSe rel_half_width_dt;
  MeanSe rel_half_width_sc;
  Index excluded_zero_truth = 0;
  int failures = 0;
};

struct LevelReport {
  double p0 = 0.0;
  std::vector<ReplicateOutcome> replicates;
  std::map<Variant, VariantSummary> summary;
};

struct ExperimentReport {
  std::vector<LevelReport> levels;
  int replicates = 0;
  bool se_available = false;  // false with a single replicate
  Variant baseline = Variant::Spline;
};

/// One replicate: mask, split, fit every variant on the training cells,
/// score the held-out cells and build conformal intervals.
/// `seed` drives the mask and the split.
ReplicateOutcome run_replicate(const Matrix& truth, const PeriodicBasis& basis, const AblationConfig& config,
                               double p0, int replicate, std::uint64_t seed);

ExperimentReport run_ablation(const AblationConfig& config);

}  // namespace siap
