#include "siap/ablation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>

#include <spdlog/spdlog.h>

#include "siap/error.hpp"
#include "siap/parallel.hpp"
#include "siap/rng.hpp"
#include "siap/softimpute.hpp"

namespace siap {

namespace {

struct VariantInfo {
  Variant v;
  const char* name;
  const char* id;
};

constexpr VariantInfo kVariants[] = {
    {Variant::Spline, "Spline", "spline"},
    {Variant::SI, "SI", "si"},
    {Variant::SIDetrended, "SI detrended", "si_detrended"},
    {Variant::SIDetrendedCov, "SI detrended w/ cov", "si_detrended_cov"},
    {Variant::SSSIA, "SS SIA", "ss_sia"},
    {Variant::SSSIADetrended, "SS SIA detrended", "ss_sia_detrended"},
    {Variant::S1SSSIDetrended, "S1 + SS SI detrended", "s1_ss_si_detrended"},
    {Variant::SIAP, "SIAP", "siap"},
};

SoftImputeOptions si_options(const VariantHyper& h) {
  SoftImputeOptions o;
  o.rank = h.rank;
  o.lambda = h.lambda;
  o.tol = h.step1.init_tol;
  o.max_iter = h.step1.init_max_iter;
  return o;
}

Step1Hyper step1_hyper(const VariantHyper& h) {
  Step1Hyper s = h.step1;
  s.rank = h.rank;
  s.lambda = h.lambda;
  return s;
}

Step2Hyper step2_hyper(const VariantHyper& h) {
  Step2Hyper s = h.step2;
  s.rank = h.rank;
  s.init_lambda = h.lambda;
  return s;
}

std::vector<Entry> downtime_cells(const MissingnessPattern& pattern) {
  std::vector<Entry> out;
  out.reserve(pattern.downtime_cols.size() * static_cast<std::size_t>(pattern.rows));
  for (const Index j : pattern.downtime_cols) {
    for (Index i = 0; i < pattern.rows; ++i) out.push_back({i, j});
  }
  return out;
}

}  // namespace

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> all = [] {
    std::vector<Variant> v;
    for (const auto& info : kVariants) v.push_back(info.v);
    return v;
  }();
  return all;
}

std::string variant_name(Variant v) {
  for (const auto& info : kVariants) {
    if (info.v == v) return info.name;
  }
  throw InternalError("variant_name: unknown variant");
}

Variant parse_variant(const std::string& name) {
  for (const auto& info : kVariants) {
    if (name == info.name || name == info.id) return info.v;
  }
  throw ConfigError("unknown variant '" + name + "'");
}

bool variant_uses_step1(Variant v) {
  return v == Variant::SIDetrendedCov || v == Variant::S1SSSIDetrended || v == Variant::SIAP;
}

Matrix fit_variant(Variant v, const MaskedMatrix& train, const PeriodicBasis& basis,
                   const VariantHyper& hyper, const Step1Result* step1) {
  const Matrix& phi = basis.phi;
  std::unique_ptr<Step1Result> own;
  auto need_step1 = [&]() -> const Step1Result& {
    if (step1) return *step1;
    own = std::make_unique<Step1Result>(step1_fit(train, basis, step1_hyper(hyper)));
    return *own;
  };
  switch (v) {
    case Variant::Spline: {
      const Matrix theta = spline_fit_masked(train, basis);
      return fill_unobserved(train, theta.transpose() * phi.transpose());
    }
    case Variant::SI:
      return complete_with(train, softimpute_als(train, si_options(hyper)));
    case Variant::SIDetrended: {
      const Matrix trend = spline_fit_masked(train, basis).transpose() * phi.transpose();
      const MaskedMatrix detrended(train.values() - trend, train.mask());
      const FactorPair f = softimpute_als(detrended, si_options(hyper));
      return fill_unobserved(train, trend + f.product());
    }
    case Variant::SIDetrendedCov: {
      const Step1Result& s1 = need_step1();
      // Downtime columns carry only the fitted observed-space mean (b_t = 0).
      return fill_unobserved(s1.x1, s1.model.fitted(basis));
    }
    case Variant::SSSIA: {
      Step2Hyper h = step2_hyper(hyper);
      h.detrend = false;
      return step2_fit(train, basis, h).imputed.values;
    }
    case Variant::SSSIADetrended:
      return step2_fit(train, basis, step2_hyper(hyper)).imputed.values;
    case Variant::S1SSSIDetrended: {
      const Step1Result& s1 = need_step1();
      Step2Hyper h = step2_hyper(hyper);
      h.alpha = 0.0;
      return step2_fit(s1.x1, basis, h).imputed.values;
    }
    case Variant::SIAP: {
      const Step1Result& s1 = need_step1();
      return step2_fit(s1.x1, basis, step2_hyper(hyper)).imputed.values;
    }
  }
  throw InternalError("fit_variant: unknown variant");
}

ReplicateOutcome run_replicate(const Matrix& truth, const PeriodicBasis& basis, const AblationConfig& config,
                               double p0, int replicate, std::uint64_t seed) {
  const Index m = truth.rows();
  const Index n = truth.cols();
  ReplicateOutcome out;
  out.replicate = replicate;
  out.seed = seed;
  const MissingnessPattern pattern = sample_mixed_missingness(m, n, p0, p0, derive_seed(seed, 0));
  const MaskedMatrix observed = pattern.apply(truth);
  const CalibrationSplit split =
      split_calibration(observed, pattern, config.p_cal1, config.p_cal2, derive_seed(seed, 1));
  const MaskedMatrix train = observed.restricted(split.train_mask());
  out.downtime_cols = static_cast<Index>(pattern.downtime_cols.size());
  out.scattered_cells = static_cast<Index>(pattern.scattered.size());
  const std::vector<Entry> dt_cells = downtime_cells(pattern);

  std::unique_ptr<Step1Result> step1;
  std::string step1_error;
  double step1_seconds = 0.0;
  const bool any_step1 = std::any_of(config.variants.begin(), config.variants.end(), variant_uses_step1);
  if (any_step1) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      step1 = std::make_unique<Step1Result>(step1_fit(train, basis, step1_hyper(config.hyper)));
    } catch (const std::exception& e) {
      step1_error = e.what();
    }
    step1_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  for (const Variant v : config.variants) {
    VariantOutcome res;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      if (variant_uses_step1(v) && !step1) throw DivergenceError("Step 1 failed: " + step1_error);
      const Matrix x_hat = fit_variant(v, train, basis, config.hyper, step1.get());
      res.downtime = mrae(x_hat, truth, dt_cells);
      res.scattered = mrae(x_hat, truth, pattern.scattered);
      const RowQuantiles q = row_quantiles(calibration_residuals(observed, x_hat, split), config.alpha);
      const IntervalEstimate iv = build_intervals(x_hat, pattern, q, &split);
      res.cover = coverage(iv, truth);
      std::vector<double> hw_dt, hw_sc, rel_dt, rel_sc;
      for (Index j = 0; j < n; ++j) {
        for (Index i = 0; i < m; ++i) {
          const auto kind = static_cast<TestKind>(iv.kind(i, j));
          if (kind == TestKind::None) continue;
          const double half = kind == TestKind::Downtime ? q.q_dt(i) : q.q_sc(i);
          if (!std::isfinite(half)) continue;
          auto& hw = kind == TestKind::Downtime ? hw_dt : hw_sc;
          auto& rel = kind == TestKind::Downtime ? rel_dt : rel_sc;
          hw.push_back(half);
          if (x_hat(i, j) != 0.0) rel.push_back(half / std::abs(x_hat(i, j)));
        }
      }
      res.half_width_dt = mean_se(hw_dt).mean;
      res.half_width_sc = mean_se(hw_sc).mean;
      res.rel_half_width_dt = mean_se(rel_dt).mean;
      res.rel_half_width_sc = mean_se(rel_sc).mean;
    } catch (const std::exception& e) {
      res.failed = true;
      res.error = e.what();
      spdlog::warn("replicate {} variant '{}' failed: {}", replicate, variant_name(v), e.what());
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() +
                  (variant_uses_step1(v) ? step1_seconds : 0.0);
    out.variants[v] = std::move(res);
  }
  return out;
}

namespace {

VariantSummary summarise(const std::vector<ReplicateOutcome>& reps, Variant v, Variant baseline, Index m) {
  VariantSummary s;
  std::vector<double> dt, sc, rdt, rsc, mdt, msc, cov, cov_dt, cov_sc, hdt, hsc, rhdt, rhsc;
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(m));
  for (const auto& rep : reps) {
    const auto it = rep.variants.find(v);
    if (it == rep.variants.end()) continue;
    const VariantOutcome& o = it->second;
    if (o.failed) {
      ++s.failures;
      continue;
    }
    dt.push_back(o.downtime.mrae);
    sc.push_back(o.scattered.mrae);
    s.excluded_zero_truth += o.downtime.excluded + o.scattered.excluded;
    const auto b = rep.variants.find(baseline);
    if (b != rep.variants.end() && !b->second.failed) {
      rdt.push_back(relative_mrae_margin(o.downtime.mrae, b->second.downtime.mrae));
      rsc.push_back(relative_mrae_margin(o.scattered.mrae, b->second.scattered.mrae));
      mdt.push_back(mrae_margin(o.downtime.mrae, b->second.downtime.mrae));
      msc.push_back(mrae_margin(o.scattered.mrae, b->second.scattered.mrae));
    }
    cov.push_back(o.cover.overall);
    cov_dt.push_back(o.cover.downtime);
    cov_sc.push_back(o.cover.scattered);
    hdt.push_back(o.half_width_dt);
    hsc.push_back(o.half_width_sc);
    rhdt.push_back(o.rel_half_width_dt);
    rhsc.push_back(o.rel_half_width_sc);
    for (Index i = 0; i < m && i < o.cover.per_row.size(); ++i) {
      rows[static_cast<std::size_t>(i)].push_back(o.cover.per_row(i));
    }
  }
  s.mrae_dt = mean_se(dt);
  s.mrae_sc = mean_se(sc);
  s.rel_margin_dt = mean_se(rdt);
  s.rel_margin_sc = mean_se(rsc);
  s.margin_dt = mean_se(mdt);
  s.margin_sc = mean_se(msc);
  s.coverage = mean_se(cov);
  s.coverage_dt = mean_se(cov_dt);
  s.coverage_sc = mean_se(cov_sc);
  s.half_width_dt = mean_se(hdt);
  s.half_width_sc = mean_se(hsc);
  s.rel_half_width_dt = mean_se(rhdt);
  s.rel_half_width_sc = mean_se(rhsc);
  s.row_coverage_mean.resize(m);
  s.row_coverage_se.resize(m);
  for (Index i = 0; i < m; ++i) {
    const MeanSe r = mean_se(rows[static_cast<std::size_t>(i)]);
    s.row_coverage_mean(i) = r.mean;
    s.row_coverage_se(i) = r.se;
  }
  return s;
}

}  // namespace

ExperimentReport run_ablation(const AblationConfig& config) {
  if (config.replicates < 1) throw ConfigError("replicates must be >= 1");
  if (config.variants.empty()) throw ConfigError("variants must not be empty");
  if (config.missingness.empty()) throw ConfigError("missingness must list at least one p0");
  for (const double p0 : config.missingness) {
    if (!(p0 >= 0.0 && p0 < 1.0)) throw ConfigError("missingness: p0 must lie in [0, 1)");
  }
  ExperimentReport report;
  report.replicates = config.replicates;
  report.se_available = config.replicates >= 2;
  if (config.replicates < 2) spdlog::warn("run_ablation: a single replicate carries no standard errors");

  // The spline baseline is always scored so margins are defined.
  AblationConfig cfg = config;
  if (std::find(cfg.variants.begin(), cfg.variants.end(), Variant::Spline) == cfg.variants.end()) {
    cfg.variants.insert(cfg.variants.begin(), Variant::Spline);
  }

  std::optional<SyntheticData> fixed;
  PeriodicBasis basis;
  if (cfg.truth) {
    basis = cfg.basis.build(index_grid(cfg.truth->cols()));
  } else {
    if (!cfg.regenerate_data) fixed = generate_synthetic(cfg.data);
    basis = cfg.basis.build(index_grid(cfg.data.n));
  }

  for (std::size_t level = 0; level < cfg.missingness.size(); ++level) {
    const double p0 = cfg.missingness[level];
    LevelReport lr;
    lr.p0 = p0;
    lr.replicates.resize(static_cast<std::size_t>(cfg.replicates));
    const std::uint64_t level_seed = derive_seed(cfg.seed, level);
    parallel_for(static_cast<std::size_t>(cfg.replicates), [&](std::size_t r) {
      const std::uint64_t rep_seed = derive_seed(level_seed, r);
      Matrix truth;
      if (cfg.truth) {
        truth = *cfg.truth;
      } else if (fixed) {
        truth = fixed->x;
      } else {
        SyntheticSpec spec = cfg.data;
        spec.seed = derive_seed(rep_seed, 7);
        truth = generate_synthetic(spec).x;
      }
      lr.replicates[r] = run_replicate(truth, basis, cfg, p0, static_cast<int>(r), rep_seed);
      spdlog::info("p0 = {:g}: replicate {} of {} done", p0, r + 1, cfg.replicates);
    });
    const Index m = cfg.truth ? cfg.truth->rows() : cfg.data.m;
    for (const Variant v : cfg.variants) lr.summary[v] = summarise(lr.replicates, v, report.baseline, m);
    report.levels.push_back(std::move(lr));
  }
  return report;
}

}  // namespace siap
