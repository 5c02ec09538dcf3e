#include "siap/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "siap/ablation.hpp"
#include "siap/conformal.hpp"
#include "siap/error.hpp"
#include "siap/parallel.hpp"
#include "siap/rng.hpp"
#include "siap/serialize.hpp"
#include "siap/step1.hpp"
#include "siap/step2.hpp"
#include "siap/synthetic.hpp"
#include "siap/tuning.hpp"

namespace fs = std::filesystem;

namespace siap::cli {

namespace {

Json default_config() {
  Json variants = Json::array();
  for (const Variant v : all_variants()) variants.push_back(variant_name(v));
  const TuneGrids grids;
  return {{"seed", 1},
          {"threads", 1},
          {"log_level", "info"},
          {"input", nullptr},
          {"mask", nullptr},
          {"truth", nullptr},
          {"pattern", nullptr},
          {"models", nullptr},
          {"out", nullptr},
          {"basis", to_json(BasisSpec::ssi_default())},
          {"step1", to_json(Step1Hyper{})},
          {"step2", to_json(Step2Hyper{})},
          {"synthetic", to_json(SyntheticSpec{})},
          {"missingness", {{"p", 0.1}, {"p_prime", 0.1}}},
          {"uq", {{"alpha", 0.05}, {"p_cal1", 0.1}, {"p_cal2", 0.1}}},
          {"tune",
           {{"folds", 10},
            {"lambda_grid", grids.lambda},
            {"lambda12_grid", grids.lambda12},
            {"alpha_grid", grids.alpha},
            {"p_max", grids.p_max}}},
          {"ablate",
           {{"variants", variants}, {"missingness", {0.1}}, {"replicates", 10}, {"regenerate_data", false}, {"timings", false}}}};
}

// Overlays src onto dst, which doubles as the schema; leaf paths taken from
// src are recorded in `sources` under `tag`.
void merge(Json& dst, const Json& src, const std::string& path, Json& sources, const char* tag) {
  if (!src.is_object()) throw ConfigError((path.empty() ? "config" : path) + ": expected an object");
  for (auto it = src.begin(); it != src.end(); ++it) {
    const std::string p = path.empty() ? it.key() : path + "." + it.key();
    if (!dst.contains(it.key())) throw ConfigError(p + ": unknown field");
    Json& slot = dst[it.key()];
    if (slot.is_object()) {
      merge(slot, it.value(), p, sources, tag);
    } else {
      slot = it.value();
      sources[p] = tag;
    }
  }
}

void set_path(Json& j, std::initializer_list<const char*> keys, const Json& value) {
  Json* node = &j;
  for (const char* k : keys) node = &(*node)[k];
  *node = value;
}

struct Context {
  std::string command;
  Json overrides = Json::object();
  std::string config_path;
  Json config;
  Json sources = Json::object();
  fs::path out;
};

std::optional<fs::path> opt_path(const Json& cfg, const char* key) {
  if (!cfg.contains(key) || cfg[key].is_null()) return std::nullopt;
  return fs::path(cfg[key].get<std::string>());
}

fs::path require_path(const Json& cfg, const char* key, const std::string& command) {
  auto p = opt_path(cfg, key);
  if (!p) throw ConfigError(std::string(key) + ": required by '" + command + "' (flag --" + key + ")");
  return *p;
}

template <typename T>
T parse_section(const Json& cfg, const char* key) {
  T value{};
  if constexpr (std::is_same_v<T, BasisSpec>) value = BasisSpec{};
  update_from_json(value, cfg.at(key), key);
  return value;
}

void write_echo(const Context& ctx) {
  // Thread count, log level and the output path do not influence results
  // and are left out so reruns produce identical files.
  Json echo = ctx.config;
  echo.erase("threads");
  echo.erase("log_level");
  echo.erase("out");
  Json sources = ctx.sources;
  sources.erase("threads");
  sources.erase("log_level");
  sources.erase("out");
  Json doc = {{"command", ctx.command}, {"config", echo}, {"sources", sources}};
  write_json(doc, ctx.out / "config.json");
}

PeriodicBasis build_basis(const Json& cfg, Index n) {
  return parse_section<BasisSpec>(cfg, "basis").build(index_grid(n));
}

MaskedMatrix load_input(const Json& cfg, const std::string& command) {
  const fs::path input = require_path(cfg, "input", command);
  spdlog::info("loading {}", input.string());
  return load_matrix(input, opt_path(cfg, "mask"));
}

struct TwoStep {
  Step1Result step1;
  Step2Result step2;
};

TwoStep fit_two_step(const MaskedMatrix& x, const PeriodicBasis& basis, const Step1Hyper& h1,
                     const Step2Hyper& h2) {
  spdlog::info("step 1: {} x {}, r = {}, r_L = {}, lambda = {:g}", x.rows(), x.cols(), h1.rank, h1.cov_rank,
               h1.lambda);
  Step1Result s1 = step1_fit(x, basis, h1);
  spdlog::info("step 1: {} iterations, converged = {}", s1.model.iterations, s1.model.converged);
  spdlog::info("step 2: p = {}, lambda1 = {:g}, lambda2 = {:g}, alpha = {:g}", h2.p, h2.lambda1, h2.lambda2,
               h2.alpha);
  const Mask original = x.mask();
  Step2Result s2 = step2_fit(s1.x1, basis, h2, nullptr, &original);
  spdlog::info("step 2: {} iterations, converged = {}", s2.model.iterations, s2.model.converged);
  return TwoStep{std::move(s1), std::move(s2)};
}

Json step1_summary(const Step1Model& m) {
  Json trace = Json::array();
  for (const double v : m.trace) trace.push_back(json_number(v));
  return {{"iterations", m.iterations}, {"converged", m.converged}, {"objective_trace", trace}};
}

void cmd_simulate(const Context& ctx) {
  const Json& cfg = ctx.config;
  const SyntheticSpec spec = parse_section<SyntheticSpec>(cfg, "synthetic");
  const double p = cfg.at("missingness").at("p").get<double>();
  const double p_prime = cfg.at("missingness").at("p_prime").get<double>();
  const auto seed = cfg.at("seed").get<std::uint64_t>();
  spdlog::info("simulate: {} x {}, rank {}, p = {:g}, p' = {:g}", spec.m, spec.n, spec.rank, p, p_prime);
  const SyntheticData data = generate_synthetic(spec);
  const MissingnessPattern pattern = sample_mixed_missingness(spec.m, spec.n, p, p_prime, seed);
  const MaskedMatrix observed = pattern.apply(data.x);
  store_grid(data.x, ctx.out / "truth.csv");
  store_grid(data.signal(), ctx.out / "signal.csv");
  store_matrix(observed, ctx.out / "data.csv");
  store_mask(observed.mask(), ctx.out / "mask.csv");
  write_json(to_json(pattern), ctx.out / "pattern.json");
}

void write_imputed(const ImputedMatrix& imp, const fs::path& out) {
  store_grid(imp.values, out / "imputed.csv");
  store_int_grid(imp.source, out / "source.csv");
}

void cmd_fit(const Context& ctx) {
  const Json& cfg = ctx.config;
  const MaskedMatrix x = load_input(cfg, ctx.command);
  const PeriodicBasis basis = build_basis(cfg, x.cols());
  const auto fit = fit_two_step(x, basis, parse_section<Step1Hyper>(cfg, "step1"),
                                parse_section<Step2Hyper>(cfg, "step2"));
  save_model(fit.step1.model, ctx.out / "step1.model");
  save_model(fit.step2.model, ctx.out / "step2.model");
  store_matrix(fit.step1.x1, ctx.out / "x1.csv");
  write_imputed(fit.step2.imputed, ctx.out);
  Json conv = {{"step1", step1_summary(fit.step1.model)},
               {"step2", to_json(convergence_report(fit.step2.model, fit.step1.x1, basis))}};
  conv["step2"]["iterations"] = fit.step2.model.iterations;
  conv["step2"]["converged"] = fit.step2.model.converged;
  write_json(conv, ctx.out / "convergence.json");
}

void cmd_impute(const Context& ctx) {
  const Json& cfg = ctx.config;
  const MaskedMatrix x = load_input(cfg, ctx.command);
  const fs::path models = require_path(cfg, "models", ctx.command);
  const Step1Model m1 = load_step1_model(models / "step1.model");
  const Step2Model m2 = load_step2_model(models / "step2.model");
  if (m1.a.rows() != x.rows() || m1.b.rows() != x.cols() || m2.a.rows() != x.rows() || m2.b.rows() != x.cols()) {
    throw DimensionError("impute: stored models do not match the input shape");
  }
  const PeriodicBasis basis = build_basis(cfg, x.cols());
  if (basis.size() != m1.theta.rows()) throw DimensionError("impute: basis size differs from the stored model");
  // Conditional means at the stored Step-1 parameters.
  std::vector<Index> working;
  for (Index j = 0; j < x.cols(); ++j) {
    if (x.observed_in_col(j) > 0) working.push_back(j);
  }
  const Matrix mu_full = m1.fitted(basis);
  Matrix xv(x.rows(), static_cast<Index>(working.size()));
  Mask xm(x.rows(), static_cast<Index>(working.size()));
  Matrix mu(x.rows(), static_cast<Index>(working.size()));
  for (std::size_t k = 0; k < working.size(); ++k) {
    xv.col(static_cast<Index>(k)) = x.values().col(working[k]);
    xm.col(static_cast<Index>(k)) = x.mask().col(working[k]);
    mu.col(static_cast<Index>(k)) = mu_full.col(working[k]);
  }
  const CondExpectations e = estep(MaskedMatrix(xv, xm), mu, m1.cov);
  Matrix x1v = x.values();
  Mask x1m = x.mask();
  for (std::size_t k = 0; k < working.size(); ++k) {
    for (const Index i : e.missing_rows[k]) {
      x1v(i, working[k]) = e.mean(i, static_cast<Index>(k));
      x1m(i, working[k]) = true;
    }
  }
  const MaskedMatrix x1(std::move(x1v), std::move(x1m));
  store_matrix(x1, ctx.out / "x1.csv");
  write_imputed(assemble_imputed(x1, m2.a, m2.b, &x.mask()), ctx.out);
}

void cmd_uq(const Context& ctx) {
  const Json& cfg = ctx.config;
  const MaskedMatrix x = load_input(cfg, ctx.command);
  const auto seed = cfg.at("seed").get<std::uint64_t>();
  const double alpha = cfg.at("uq").at("alpha").get<double>();
  const double p_cal1 = cfg.at("uq").at("p_cal1").get<double>();
  const double p_cal2 = cfg.at("uq").at("p_cal2").get<double>();
  MissingnessPattern pattern;
  if (const auto pp = opt_path(cfg, "pattern")) {
    pattern = pattern_from_json(read_json(*pp));
    if (pattern.rows != x.rows() || pattern.cols != x.cols()) {
      throw DimensionError("uq: pattern shape does not match the input");
    }
    for (const Index j : pattern.downtime_cols) {
      if (x.observed_in_col(j) > 0) throw InputError("uq: pattern downtime column " + std::to_string(j) + " has observations");
    }
  } else {
    pattern = pattern_from_mask(x.mask());
  }
  const CalibrationSplit split = split_calibration(x, pattern, p_cal1, p_cal2, derive_seed(seed, 1));
  const MaskedMatrix train = x.restricted(split.train_mask());
  const PeriodicBasis basis = build_basis(cfg, x.cols());
  const auto fit = fit_two_step(train, basis, parse_section<Step1Hyper>(cfg, "step1"),
                                parse_section<Step2Hyper>(cfg, "step2"));
  const Matrix& x_hat = fit.step2.imputed.values;
  const RowQuantiles q = row_quantiles(calibration_residuals(x, x_hat, split), alpha);
  const IntervalEstimate iv = build_intervals(x_hat, pattern, q, &split);
  store_grid(iv.x_hat, ctx.out / "point.csv");
  store_grid(iv.lower, ctx.out / "lower.csv");
  store_grid(iv.upper, ctx.out / "upper.csv");
  store_int_grid(iv.kind, ctx.out / "kind.csv");
  write_json(to_json(q), ctx.out / "quantiles.json");
  write_json(to_json(split), ctx.out / "split.json");
  write_json(to_json(pattern), ctx.out / "pattern.json");
  if (const auto tp = opt_path(cfg, "truth")) {
    const MaskedMatrix truth = load_matrix(*tp);
    if (!truth.fully_observed() || truth.rows() != x.rows() || truth.cols() != x.cols()) {
      throw InputError("uq: truth must be a fully observed matrix of the input's shape");
    }
    const CoverageSummary c = coverage(iv, truth.values());
    spdlog::info("uq: coverage {:.4f} over {} test cells", c.overall, c.test_cells);
    write_json(to_json(c), ctx.out / "coverage.json");
  }
}

void cmd_tune(const Context& ctx) {
  const Json& cfg = ctx.config;
  const MaskedMatrix x = load_input(cfg, ctx.command);
  const PeriodicBasis basis = build_basis(cfg, x.cols());
  const Json& t = cfg.at("tune");
  TuneGrids grids;
  grids.lambda = t.at("lambda_grid").get<std::vector<double>>();
  grids.lambda12 = t.at("lambda12_grid").get<std::vector<double>>();
  grids.alpha = t.at("alpha_grid").get<std::vector<double>>();
  grids.p_max = t.at("p_max").get<Index>();
  CvOptions cv;
  cv.folds = t.at("folds").get<int>();
  cv.seed = derive_seed(cfg.at("seed").get<std::uint64_t>(), 2);
  const TuneResult r = tune_pipeline(x, basis, grids, cv, parse_section<Step1Hyper>(cfg, "step1"),
                                     parse_section<Step2Hyper>(cfg, "step2"));
  Json doc = {{"selected",
               {{"lambda", json_number(r.lambda_best)},
                {"lambda1", json_number(r.lambda12_best)},
                {"lambda2", json_number(r.lambda12_best)},
                {"p", r.p_best},
                {"alpha", json_number(r.alpha_best)}}},
              {"lambda_cv", to_json(r.lambda)},
              {"lambda12_cv", to_json(r.lambda12)},
              {"p_bic", to_json(r.p)},
              {"alpha_cv", to_json(r.alpha)}};
  write_json(doc, ctx.out / "tune.json");
  write_cv_csv(r.lambda, "lambda", ctx.out / "lambda_cv.csv");
  write_cv_csv(r.lambda12, "lambda12", ctx.out / "lambda12_cv.csv");
  write_cv_csv(r.alpha, "alpha", ctx.out / "alpha_cv.csv");
  write_bic_csv(r.p, ctx.out / "p_bic.csv");
}

void cmd_ablate(const Context& ctx) {
  const Json& cfg = ctx.config;
  AblationConfig ac;
  ac.data = parse_section<SyntheticSpec>(cfg, "synthetic");
  ac.basis = parse_section<BasisSpec>(cfg, "basis");
  if (const auto tp = opt_path(cfg, "truth")) {
    const MaskedMatrix truth = load_matrix(*tp);
    if (!truth.fully_observed()) throw InputError("ablate: truth matrix must be fully observed");
    ac.truth = truth.values();
  }
  const Json& a = cfg.at("ablate");
  ac.variants.clear();
  for (const auto& v : a.at("variants")) ac.variants.push_back(parse_variant(v.get<std::string>()));
  ac.missingness = a.at("missingness").get<std::vector<double>>();
  ac.replicates = a.at("replicates").get<int>();
  ac.regenerate_data = a.at("regenerate_data").get<bool>();
  ac.seed = cfg.at("seed").get<std::uint64_t>();
  ac.alpha = cfg.at("uq").at("alpha").get<double>();
  ac.p_cal1 = cfg.at("uq").at("p_cal1").get<double>();
  ac.p_cal2 = cfg.at("uq").at("p_cal2").get<double>();
  ac.hyper.step1 = parse_section<Step1Hyper>(cfg, "step1");
  ac.hyper.step2 = parse_section<Step2Hyper>(cfg, "step2");
  ac.hyper.rank = ac.hyper.step1.rank;
  ac.hyper.lambda = ac.hyper.step1.lambda;
  const ExperimentReport report = run_ablation(ac);
  write_json(to_json(report), ctx.out / "report.json");
  write_report_csv(report, ctx.out / "report.csv");
  write_row_coverage_csv(report, ctx.out / "row_coverage.csv");
  // Wall-clock times vary between runs, so they are opt-in and kept apart
  // from the report.
  if (!a.at("timings").get<bool>()) return;
  Json times = Json::array();
  for (const auto& lvl : report.levels) {
    for (const auto& rep : lvl.replicates) {
      for (const auto& [v, o] : rep.variants) {
        times.push_back({{"p0", lvl.p0}, {"replicate", rep.replicate}, {"variant", variant_name(v)}, {"seconds", o.seconds}});
      }
    }
  }
  write_json(times, ctx.out / "timings.json");
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config: return 2;
    case ErrorKind::Data: return 3;
    case ErrorKind::Numerical: return 4;
  }
  return 4;
}

const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Data: return "data";
    case ErrorKind::Numerical: return "numerical";
  }
  return "numerical";
}

int report_error(const Context& ctx, const std::string& type, const char* kind, int code, const std::string& msg) {
  const Json err = {{"error", type}, {"kind", kind}, {"exit_code", code}, {"command", ctx.command}, {"message", msg}};
  std::cerr << err.dump() << std::endl;
  if (!ctx.out.empty()) {
    std::error_code ec;
    fs::create_directories(ctx.out, ec);
    std::ofstream f(ctx.out / "error.json");
    if (f) f << err.dump(2) << '\n';
  }
  return code;
}

void setup_logging(const std::string& level) {
  static std::shared_ptr<spdlog::logger> logger = [] {
    auto l = std::make_shared<spdlog::logger>("siap", std::make_shared<spdlog::sinks::stderr_sink_mt>());
    l->set_pattern("[%H:%M:%S.%e] [%l] %v");
    return l;
  }();
  spdlog::set_default_logger(logger);
  const auto lvl = spdlog::level::from_str(level);
  if (lvl == spdlog::level::off && level != "off") throw ConfigError("log_level: unknown level '" + level + "'");
  spdlog::set_level(lvl);
}

void add_common(CLI::App* sub, Context& ctx) {
  Json& ov = ctx.overrides;
  sub->add_option("--config", ctx.config_path, "JSON run configuration");
  sub->add_option_function<std::string>("--out", [&ov](const std::string& v) { ov["out"] = v; }, "Output directory");
  sub->add_option_function<std::uint64_t>("--seed", [&ov](const std::uint64_t& v) { ov["seed"] = v; }, "Master seed");
  sub->add_option_function<int>("--threads", [&ov](const int& v) { ov["threads"] = v; }, "Worker threads");
  sub->add_option_function<std::string>("--log-level", [&ov](const std::string& v) { ov["log_level"] = v; },
                                        "trace, debug, info, warn, error or off");
}

void add_data(CLI::App* sub, Context& ctx) {
  Json& ov = ctx.overrides;
  sub->add_option_function<std::string>("--input", [&ov](const std::string& v) { ov["input"] = v; }, "Data CSV");
  sub->add_option_function<std::string>("--mask", [&ov](const std::string& v) { ov["mask"] = v; }, "0/1 mask CSV");
}

void add_model(CLI::App* sub, Context& ctx) {
  Json& ov = ctx.overrides;
  sub->add_option_function<Index>("--rank", [&ov](const Index& v) {
    set_path(ov, {"step1", "rank"}, v);
    set_path(ov, {"step2", "rank"}, v);
  }, "Factor rank r for both steps");
  sub->add_option_function<double>("--lambda", [&ov](const double& v) {
    set_path(ov, {"step1", "lambda"}, v);
    set_path(ov, {"step2", "init_lambda"}, v);
  }, "Step-1 ridge weight");
  sub->add_option_function<Index>("--cov-rank", [&ov](const Index& v) { set_path(ov, {"step1", "cov_rank"}, v); },
                                  "Rank r_L of the spiked covariance");
  sub->add_option_function<double>("--lambda1", [&ov](const double& v) { set_path(ov, {"step2", "lambda1"}, v); });
  sub->add_option_function<double>("--lambda2", [&ov](const double& v) { set_path(ov, {"step2", "lambda2"}, v); });
  sub->add_option_function<double>("--ar-alpha", [&ov](const double& v) { set_path(ov, {"step2", "alpha"}, v); },
                                   "AR penalty weight");
  sub->add_option_function<Index>("--ar-order", [&ov](const Index& v) { set_path(ov, {"step2", "p"}, v); },
                                  "AR order p");
  sub->add_option_function<double>("--step1-tol", [&ov](const double& v) {
    set_path(ov, {"step1", "tol"}, v);
    set_path(ov, {"step1", "tol_lambda"}, v);
  });
  sub->add_option_function<int>("--step1-max-iter", [&ov](const int& v) { set_path(ov, {"step1", "max_iter"}, v); });
  sub->add_option_function<double>("--step2-tol", [&ov](const double& v) { set_path(ov, {"step2", "tol"}, v); });
  sub->add_option_function<int>("--step2-max-iter", [&ov](const int& v) { set_path(ov, {"step2", "max_iter"}, v); });
  sub->add_option_function<std::string>("--b-update", [&ov](const std::string& v) { set_path(ov, {"step2", "variant"}, v); },
                                        "auto, vectorized or sequential");
  sub->add_option_function<std::vector<double>>("--periods", [&ov](const std::vector<double>& v) {
    set_path(ov, {"basis", "periods"}, v);
  }, "Spline periods")->delimiter(',');
  sub->add_option_function<std::vector<int>>("--knots", [&ov](const std::vector<int>& v) {
    set_path(ov, {"basis", "knots"}, v);
  }, "Knots per period")->delimiter(',');
}

void add_uq(CLI::App* sub, Context& ctx) {
  Json& ov = ctx.overrides;
  sub->add_option_function<double>("--coverage-alpha", [&ov](const double& v) { set_path(ov, {"uq", "alpha"}, v); },
                                   "Miscoverage level");
  sub->add_option_function<double>("--p-cal1", [&ov](const double& v) { set_path(ov, {"uq", "p_cal1"}, v); });
  sub->add_option_function<double>("--p-cal2", [&ov](const double& v) { set_path(ov, {"uq", "p_cal2"}, v); });
}

void add_synthetic(CLI::App* sub, Context& ctx) {
  Json& ov = ctx.overrides;
  sub->add_option_function<Index>("--m", [&ov](const Index& v) { set_path(ov, {"synthetic", "m"}, v); }, "Rows");
  sub->add_option_function<Index>("--n", [&ov](const Index& v) { set_path(ov, {"synthetic", "n"}, v); }, "Columns");
  sub->add_option_function<Index>("--true-rank", [&ov](const Index& v) { set_path(ov, {"synthetic", "rank"}, v); });
  sub->add_option_function<std::uint64_t>("--data-seed", [&ov](const std::uint64_t& v) {
    set_path(ov, {"synthetic", "seed"}, v);
  }, "Seed of the synthetic matrix");
}

}  // namespace

int run(int argc, const char* const* argv) {
  Context ctx;
  CLI::App app{"Two-step matrix-factorisation imputation with conformal intervals"};
  app.require_subcommand(1);
  Json& ov = ctx.overrides;

  auto* simulate = app.add_subcommand("simulate", "Synthetic matrix, mask and ground truth");
  add_common(simulate, ctx);
  add_synthetic(simulate, ctx);
  simulate->add_option_function<double>("--p0", [&ov](const double& v) {
    set_path(ov, {"missingness", "p"}, v);
    set_path(ov, {"missingness", "p_prime"}, v);
  }, "Downtime and scattered probability");
  simulate->add_option_function<double>("--p-downtime", [&ov](const double& v) { set_path(ov, {"missingness", "p"}, v); });
  simulate->add_option_function<double>("--p-scattered", [&ov](const double& v) {
    set_path(ov, {"missingness", "p_prime"}, v);
  });

  auto* fit = app.add_subcommand("fit", "Step 1 then Step 2; models and the imputed matrix");
  add_common(fit, ctx);
  add_data(fit, ctx);
  add_model(fit, ctx);

  auto* impute = app.add_subcommand("impute", "Apply stored models to data of the fitted shape");
  add_common(impute, ctx);
  add_data(impute, ctx);
  add_model(impute, ctx);
  impute->add_option_function<std::string>("--models", [&ov](const std::string& v) { ov["models"] = v; },
                                           "Directory holding step1.model and step2.model");

  auto* uq = app.add_subcommand("uq", "Calibration split, conformal intervals and coverage");
  add_common(uq, ctx);
  add_data(uq, ctx);
  add_model(uq, ctx);
  add_uq(uq, ctx);
  uq->add_option_function<std::string>("--truth", [&ov](const std::string& v) { ov["truth"] = v; }, "Truth CSV");
  uq->add_option_function<std::string>("--pattern", [&ov](const std::string& v) { ov["pattern"] = v; },
                                       "Missingness pattern JSON");

  auto* tune = app.add_subcommand("tune", "Cross-validation and BIC hyperparameter selection");
  add_common(tune, ctx);
  add_data(tune, ctx);
  add_model(tune, ctx);
  tune->add_option_function<int>("--folds", [&ov](const int& v) { set_path(ov, {"tune", "folds"}, v); });
  tune->add_option_function<std::vector<double>>("--lambda-grid", [&ov](const std::vector<double>& v) {
    set_path(ov, {"tune", "lambda_grid"}, v);
  })->delimiter(',');
  tune->add_option_function<std::vector<double>>("--lambda12-grid", [&ov](const std::vector<double>& v) {
    set_path(ov, {"tune", "lambda12_grid"}, v);
  })->delimiter(',');
  tune->add_option_function<std::vector<double>>("--alpha-grid", [&ov](const std::vector<double>& v) {
    set_path(ov, {"tune", "alpha_grid"}, v);
  })->delimiter(',');
  tune->add_option_function<Index>("--p-max", [&ov](const Index& v) { set_path(ov, {"tune", "p_max"}, v); });

  auto* ablate = app.add_subcommand("ablate", "Simulation study over the module compositions");
  add_common(ablate, ctx);
  add_model(ablate, ctx);
  add_uq(ablate, ctx);
  add_synthetic(ablate, ctx);
  ablate->add_option_function<std::string>("--truth", [&ov](const std::string& v) { ov["truth"] = v; },
                                           "Fully observed matrix replacing the generator");
  ablate->add_option_function<int>("--replicates", [&ov](const int& v) { set_path(ov, {"ablate", "replicates"}, v); });
  ablate->add_option_function<std::vector<std::string>>("--variants", [&ov](const std::vector<std::string>& v) {
    set_path(ov, {"ablate", "variants"}, v);
  })->delimiter(',');
  ablate->add_option_function<std::vector<double>>("--levels", [&ov](const std::vector<double>& v) {
    set_path(ov, {"ablate", "missingness"}, v);
  }, "Missingness levels p0")->delimiter(',');
  ablate->add_flag_callback("--regenerate-data", [&ov] { set_path(ov, {"ablate", "regenerate_data"}, true); },
                            "Fresh synthetic matrix per replicate");
  ablate->add_flag_callback("--timings", [&ov] { set_path(ov, {"ablate", "timings"}, true); },
                            "Also write per-variant wall-clock seconds (timings.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e);
      return 0;
    }
    return report_error(ctx, "usage_error", "config", 2, e.what());
  }
  for (auto* sub : app.get_subcommands()) ctx.command = sub->get_name();

  try {
    // Known before the merge so config errors still land in error.json.
    if (ctx.overrides.contains("out") && ctx.overrides["out"].is_string()) ctx.out = ctx.overrides["out"].get<std::string>();
    ctx.config = default_config();
    if (!ctx.config_path.empty()) {
      Json file;
      try {
        file = read_json(ctx.config_path);
      } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
      }
      merge(ctx.config, file, "", ctx.sources, "config");
    }
    merge(ctx.config, ctx.overrides, "", ctx.sources, "flag");
    if (ctx.config["out"].is_null()) throw ConfigError("out: an output directory is required (--out)");
    ctx.out = ctx.config["out"].get<std::string>();
    setup_logging(ctx.config.at("log_level").get<std::string>());
    const int threads = ctx.config.at("threads").get<int>();
    if (threads < 1) throw ConfigError("threads: must be >= 1");
    thread_cap() = threads;
    fs::create_directories(ctx.out);
    write_echo(ctx);

    if (ctx.command == "simulate") cmd_simulate(ctx);
    else if (ctx.command == "fit") cmd_fit(ctx);
    else if (ctx.command == "impute") cmd_impute(ctx);
    else if (ctx.command == "uq") cmd_uq(ctx);
    else if (ctx.command == "tune") cmd_tune(ctx);
    else if (ctx.command == "ablate") cmd_ablate(ctx);
    spdlog::info("{}: outputs in {}", ctx.command, ctx.out.string());
    return 0;
  } catch (const Error& e) {
    return report_error(ctx, e.type_name(), kind_name(e.kind()), exit_code(e.kind()), e.what());
  } catch (const Json::exception& e) {
    return report_error(ctx, "config_error", "config", 2, e.what());
  } catch (const fs::filesystem_error& e) {
    return report_error(ctx, "input_error", "data", 3, e.what());
  } catch (const std::exception& e) {
    return report_error(ctx, "internal_error", "numerical", 4, e.what());
  }
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("siap");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace siap::cli
