#include "siap/serialize.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>

#include "siap/error.hpp"

namespace siap {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

std::string variant_str(BUpdateVariant v) {
  switch (v) {
    case BUpdateVariant::Auto: return "auto";
    case BUpdateVariant::Vectorized: return "vectorized";
    case BUpdateVariant::Sequential: return "sequential";
  }
  return "auto";
}

BUpdateVariant variant_from(const std::string& s, const std::string& where) {
  if (s == "auto") return BUpdateVariant::Auto;
  if (s == "vectorized") return BUpdateVariant::Vectorized;
  if (s == "sequential") return BUpdateVariant::Sequential;
  throw ConfigError(where + ": expected auto, vectorized or sequential, got '" + s + "'");
}

using Setter = std::function<void(const Json&)>;

// Applies the setters for the keys of `j`; unknown keys and type errors name the field path.
void apply_fields(const Json& j, const std::string& where, const std::map<std::string, Setter>& setters) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string path = where + "." + it.key();
    const auto s = setters.find(it.key());
    if (s == setters.end()) throw ConfigError(path + ": unknown field");
    try {
      s->second(it.value());
    } catch (const Json::exception& e) {
      throw ConfigError(path + ": " + e.what());
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }
}

template <typename T>
Setter set(T& field) {
  return [&field](const Json& v) { field = v.get<T>(); };
}

Json index_array(const std::vector<Index>& v) {
  Json a = Json::array();
  for (const Index i : v) a.push_back(i);
  return a;
}

Json entry_array(const std::vector<Entry>& v) {
  Json a = Json::array();
  for (const Entry& e : v) a.push_back(Json::array({e.row, e.col}));
  return a;
}

std::vector<Entry> entries_from(const Json& j) {
  std::vector<Entry> out;
  for (const auto& e : j) out.push_back({e.at(0).get<Index>(), e.at(1).get<Index>()});
  return out;
}

Json number_array(const std::vector<double>& v) {
  Json a = Json::array();
  for (const double x : v) a.push_back(json_number(x));
  return a;
}

Json number_array(const Vector& v) {
  Json a = Json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(json_number(v(i)));
  return a;
}

std::vector<double> numbers_from(const Json& j) {
  std::vector<double> out;
  for (const auto& v : j) out.push_back(number_from_json(v));
  return out;
}

struct Blob {
  std::string name;
  const Matrix* data;
};

void write_blobs(Json header, const std::vector<Blob>& blobs, const std::filesystem::path& path) {
  Json list = Json::array();
  std::uint64_t offset = 0;
  for (const Blob& b : blobs) {
    list.push_back({{"name", b.name}, {"rows", b.data->rows()}, {"cols", b.data->cols()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(b.data->size()) * 8;
  }
  header["blobs"] = list;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  const std::string line = header.dump();
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  out.put('\n');
  for (const Blob& b : blobs) {
    for (Index k = 0; k < b.data->size(); ++k) {
      auto bits = std::bit_cast<std::uint64_t>(b.data->data()[k]);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
      char bytes[8];
      std::memcpy(bytes, &bits, 8);
      out.write(bytes, 8);
    }
  }
  if (!out) throw InputError("failed writing " + path.string());
}

struct ModelFile {
  Json header;
  std::map<std::string, Matrix> blobs;
};

ModelFile read_blobs(const std::filesystem::path& path, const std::string& kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open model file " + path.string());
  std::string line;
  std::getline(in, line);
  ModelFile f;
  try {
    f.header = Json::parse(line);
  } catch (const Json::exception& e) {
    throw FormatError(path.string() + ": malformed model header: " + e.what());
  }
  if (f.header.value("format", "") != "siap-model" || f.header.value("kind", "") != kind) {
    throw FormatError(path.string() + ": not a " + kind + " model file");
  }
  const std::streampos base = in.tellg();
  for (const auto& b : f.header.at("blobs")) {
    const auto rows = b.at("rows").get<Index>();
    const auto cols = b.at("cols").get<Index>();
    Matrix m(rows, cols);
    in.seekg(base + static_cast<std::streamoff>(b.at("offset").get<std::uint64_t>()));
    for (Index k = 0; k < m.size(); ++k) {
      char bytes[8];
      in.read(bytes, 8);
      std::uint64_t bits = 0;
      std::memcpy(&bits, bytes, 8);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
      m.data()[k] = std::bit_cast<double>(bits);
    }
    if (!in) throw FormatError(path.string() + ": truncated blob '" + b.at("name").get<std::string>() + "'");
    f.blobs[b.at("name").get<std::string>()] = std::move(m);
  }
  return f;
}

const Matrix& blob(const ModelFile& f, const std::string& name) {
  const auto it = f.blobs.find(name);
  if (it == f.blobs.end()) throw FormatError("model file lacks blob '" + name + "'");
  return it->second;
}

}  // namespace

Json json_number(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double number_from_json(const Json& j) {
  if (j.is_null()) return kMissing;
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return kInf;
    if (s == "-inf") return -kInf;
    throw FormatError("expected a number, got '" + s + "'");
  }
  return j.get<double>();
}

Json to_json(const Step1Hyper& h) {
  return {{"rank", h.rank},         {"cov_rank", h.cov_rank},         {"lambda", h.lambda},
          {"tol", h.tol},           {"tol_lambda", h.tol_lambda},     {"max_iter", h.max_iter},
          {"seed", h.seed},         {"init_max_iter", h.init_max_iter}, {"init_tol", h.init_tol}};
}

Json to_json(const Step2Hyper& h) {
  return {{"rank", h.rank},
          {"p", h.p},
          {"lambda1", h.lambda1},
          {"lambda2", h.lambda2},
          {"alpha", h.alpha},
          {"tol", h.tol},
          {"max_iter", h.max_iter},
          {"variant", variant_str(h.variant)},
          {"detrend", h.detrend},
          {"gamma_refresh", h.gamma_refresh},
          {"init_lambda", h.init_lambda},
          {"init_tol", h.init_tol},
          {"init_max_iter", h.init_max_iter},
          {"check_monotone", h.check_monotone}};
}

Json to_json(const BasisSpec& b) { return {{"periods", b.periods}, {"knots", b.knots}}; }

Json to_json(const SyntheticSpec& s) {
  return {{"m", s.m},
          {"n", s.n},
          {"rank", s.rank},
          {"basis", to_json(s.basis)},
          {"level_min", s.level_min},
          {"level_max", s.level_max},
          {"trend_amplitude", s.trend_amplitude},
          {"factor_scale", s.factor_scale},
          {"ar", s.ar},
          {"innovation_sd", s.innovation_sd},
          {"noise_sd", s.noise_sd},
          {"noise_rank", s.noise_rank},
          {"noise_loading_sd", s.noise_loading_sd},
          {"seed", s.seed}};
}

void update_from_json(Step1Hyper& h, const Json& j, const std::string& where) {
  apply_fields(j, where,
               {{"rank", set(h.rank)},
                {"cov_rank", set(h.cov_rank)},
                {"lambda", set(h.lambda)},
                {"tol", set(h.tol)},
                {"tol_lambda", set(h.tol_lambda)},
                {"max_iter", set(h.max_iter)},
                {"seed", set(h.seed)},
                {"init_max_iter", set(h.init_max_iter)},
                {"init_tol", set(h.init_tol)}});
}

void update_from_json(Step2Hyper& h, const Json& j, const std::string& where) {
  apply_fields(j, where,
               {{"rank", set(h.rank)},
                {"p", set(h.p)},
                {"lambda1", set(h.lambda1)},
                {"lambda2", set(h.lambda2)},
                {"alpha", set(h.alpha)},
                {"tol", set(h.tol)},
                {"max_iter", set(h.max_iter)},
                {"variant", [&](const Json& v) { h.variant = variant_from(v.get<std::string>(), where + ".variant"); }},
                {"detrend", set(h.detrend)},
                {"gamma_refresh", set(h.gamma_refresh)},
                {"init_lambda", set(h.init_lambda)},
                {"init_tol", set(h.init_tol)},
                {"init_max_iter", set(h.init_max_iter)},
                {"check_monotone", set(h.check_monotone)}});
}

void update_from_json(BasisSpec& b, const Json& j, const std::string& where) {
  apply_fields(j, where, {{"periods", set(b.periods)}, {"knots", set(b.knots)}});
  if (b.periods.size() != b.knots.size()) throw ConfigError(where + ": periods and knots differ in length");
}

void update_from_json(SyntheticSpec& s, const Json& j, const std::string& where) {
  apply_fields(j, where,
               {{"m", set(s.m)},
                {"n", set(s.n)},
                {"rank", set(s.rank)},
                {"basis", [&](const Json& v) { update_from_json(s.basis, v, where + ".basis"); }},
                {"level_min", set(s.level_min)},
                {"level_max", set(s.level_max)},
                {"trend_amplitude", set(s.trend_amplitude)},
                {"factor_scale", set(s.factor_scale)},
                {"ar", set(s.ar)},
                {"innovation_sd", set(s.innovation_sd)},
                {"noise_sd", set(s.noise_sd)},
                {"noise_rank", set(s.noise_rank)},
                {"noise_loading_sd", set(s.noise_loading_sd)},
                {"seed", set(s.seed)}});
}

Json to_json(const MissingnessPattern& p) {
  return {{"rows", p.rows},
          {"cols", p.cols},
          {"p", p.p},
          {"p_prime", p.p_prime},
          {"seed", p.seed},
          {"downtime_cols", index_array(p.downtime_cols)},
          {"scattered", entry_array(p.scattered)}};
}

MissingnessPattern pattern_from_json(const Json& j) {
  try {
    MissingnessPattern p;
    p.rows = j.at("rows").get<Index>();
    p.cols = j.at("cols").get<Index>();
    p.p = j.at("p").get<double>();
    p.p_prime = j.at("p_prime").get<double>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.downtime_cols = j.at("downtime_cols").get<std::vector<Index>>();
    p.scattered = entries_from(j.at("scattered"));
    return p;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("pattern JSON: ") + e.what());
  }
}

Json to_json(const CalibrationSplit& s) {
  return {{"rows", s.rows},
          {"cols", s.cols},
          {"p_cal1", s.p_cal1},
          {"p_cal2", s.p_cal2},
          {"seed", s.seed},
          {"cal_downtime_cols", index_array(s.cal_downtime_cols)},
          {"train", entry_array(s.train)},
          {"cal_downtime", entry_array(s.cal_downtime)},
          {"cal_scattered", entry_array(s.cal_scattered)}};
}

CalibrationSplit split_from_json(const Json& j) {
  try {
    CalibrationSplit s;
    s.rows = j.at("rows").get<Index>();
    s.cols = j.at("cols").get<Index>();
    s.p_cal1 = j.at("p_cal1").get<double>();
    s.p_cal2 = j.at("p_cal2").get<double>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.cal_downtime_cols = j.at("cal_downtime_cols").get<std::vector<Index>>();
    s.train = entries_from(j.at("train"));
    s.cal_downtime = entries_from(j.at("cal_downtime"));
    s.cal_scattered = entries_from(j.at("cal_scattered"));
    return s;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("split JSON: ") + e.what());
  }
}

Json to_json(const RowQuantiles& q) {
  return {{"alpha", q.alpha},
          {"q_sc", number_array(q.q_sc)},
          {"q_dt", number_array(q.q_dt)},
          {"n_cal_sc", index_array(q.n_cal_sc)},
          {"n_cal_dt", index_array(q.n_cal_dt)}};
}

Json to_json(const CoverageSummary& c) {
  return {{"overall", json_number(c.overall)},
          {"downtime", json_number(c.downtime)},
          {"scattered", json_number(c.scattered)},
          {"test_cells", c.test_cells},
          {"downtime_cells", c.downtime_cells},
          {"scattered_cells", c.scattered_cells},
          {"per_row", number_array(c.per_row)}};
}

Json to_json(const ConvergenceReport& r) {
  return {{"monotone_violations", r.monotone_violations},
          {"worst_relative_increase", json_number(r.worst_increase)},
          {"min_delta", json_number(r.min_delta)},
          {"delta_bound", json_number(r.delta_bound)},
          {"rate_bound_holds", r.rate_bound_holds},
          {"grad_a", json_number(r.grad_a)},
          {"grad_b_tilde", json_number(r.grad_b)},
          {"grad_theta", json_number(r.grad_theta)},
          {"stationarity", json_number(r.stationarity)}};
}

Json to_json(const MeanSe& s) {
  return {{"mean", json_number(s.mean)}, {"se", json_number(s.se)}, {"n", s.count}};
}

Json to_json(const ExperimentReport& r, bool per_replicate, bool timings) {
  Json out;
  out["replicates"] = r.replicates;
  out["se_available"] = r.se_available;
  out["baseline"] = variant_name(r.baseline);
  Json levels = Json::array();
  for (const auto& lvl : r.levels) {
    Json l;
    l["p0"] = lvl.p0;
    Json summary = Json::object();
    for (const auto& [v, s] : lvl.summary) {
      summary[variant_name(v)] = {{"mrae_downtime", to_json(s.mrae_dt)},
                                  {"mrae_scattered", to_json(s.mrae_sc)},
                                  {"margin_downtime", to_json(s.margin_dt)},
                                  {"margin_scattered", to_json(s.margin_sc)},
                                  {"rel_margin_downtime", to_json(s.rel_margin_dt)},
                                  {"rel_margin_scattered", to_json(s.rel_margin_sc)},
                                  {"coverage", to_json(s.coverage)},
                                  {"coverage_downtime", to_json(s.coverage_dt)},
                                  {"coverage_scattered", to_json(s.coverage_sc)},
                                  {"half_width_downtime", to_json(s.half_width_dt)},
                                  {"half_width_scattered", to_json(s.half_width_sc)},
                                  {"rel_half_width_downtime", to_json(s.rel_half_width_dt)},
                                  {"rel_half_width_scattered", to_json(s.rel_half_width_sc)},
                                  {"row_coverage_mean", number_array(s.row_coverage_mean)},
                                  {"row_coverage_se", number_array(s.row_coverage_se)},
                                  {"excluded_zero_truth", s.excluded_zero_truth},
                                  {"failures", s.failures}};
    }
    l["summary"] = summary;
    if (per_replicate) {
      Json reps = Json::array();
      for (const auto& rep : lvl.replicates) {
        Json jr = {{"replicate", rep.replicate},
                   {"seed", rep.seed},
                   {"downtime_cols", rep.downtime_cols},
                   {"scattered_cells", rep.scattered_cells}};
        Json vs = Json::object();
        for (const auto& [v, o] : rep.variants) {
          Json jo = {{"failed", o.failed}};
          if (o.failed) jo["error"] = o.error;
          jo["mrae_downtime"] = json_number(o.downtime.mrae);
          jo["mrae_scattered"] = json_number(o.scattered.mrae);
          jo["excluded"] = o.downtime.excluded + o.scattered.excluded;
          jo["coverage"] = json_number(o.cover.overall);
          jo["coverage_downtime"] = json_number(o.cover.downtime);
          jo["coverage_scattered"] = json_number(o.cover.scattered);
          jo["half_width_downtime"] = json_number(o.half_width_dt);
          jo["half_width_scattered"] = json_number(o.half_width_sc);
          if (timings) jo["seconds"] = o.seconds;
          vs[variant_name(v)] = jo;
        }
        jr["variants"] = vs;
        reps.push_back(jr);
      }
      l["replicate_results"] = reps;
    }
    levels.push_back(l);
  }
  out["levels"] = levels;
  return out;
}

Json to_json(const CvPath& p) {
  Json folds = Json::array();
  for (const auto& f : p.fold_scores) folds.push_back(number_array(f));
  return {{"grid", p.grid},
          {"score", number_array(p.score)},
          {"fold_scores", folds},
          {"best", json_number(p.best)},
          {"folds_used", p.folds_used}};
}

Json to_json(const BicPath& p) {
  return {{"orders", index_array(p.orders)}, {"bic", number_array(p.bic)}, {"best", p.best}, {"windows", p.windows}};
}

void save_model(const Step1Model& model, const std::filesystem::path& path) {
  Json h;
  h["format"] = "siap-model";
  h["kind"] = "step1";
  h["rows"] = model.a.rows();
  h["cols"] = model.b.rows();
  h["hyper"] = to_json(model.hyper);
  h["iterations"] = model.iterations;
  h["converged"] = model.converged;
  h["working_cols"] = index_array(model.working_cols);
  h["trace"] = number_array(model.trace);
  h["lambda_change"] = number_array(model.lambda_change);
  const Matrix lambda = model.cov.diag();
  write_blobs(h,
              {{"A", &model.a}, {"B", &model.b}, {"Theta", &model.theta}, {"Lambda", &lambda},
               {"L", &model.cov.loadings()}},
              path);
}

Step1Model load_step1_model(const std::filesystem::path& path) {
  const ModelFile f = read_blobs(path, "step1");
  Step1Model m;
  try {
    update_from_json(m.hyper, f.header.at("hyper"), "hyper");
    m.iterations = f.header.at("iterations").get<int>();
    m.converged = f.header.at("converged").get<bool>();
    m.working_cols = f.header.at("working_cols").get<std::vector<Index>>();
    m.trace = numbers_from(f.header.at("trace"));
    m.lambda_change = numbers_from(f.header.at("lambda_change"));
  } catch (const Json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  m.a = blob(f, "A");
  m.b = blob(f, "B");
  m.theta = blob(f, "Theta");
  m.cov = SpikedCovariance(blob(f, "Lambda").col(0), blob(f, "L"));
  return m;
}

void save_model(const Step2Model& model, const std::filesystem::path& path) {
  Json h;
  h["format"] = "siap-model";
  h["kind"] = "step2";
  h["rows"] = model.a.rows();
  h["cols"] = model.b.rows();
  h["hyper"] = to_json(model.hyper);
  h["variant_used"] = variant_str(model.variant_used);
  h["iterations"] = model.iterations;
  h["converged"] = model.converged;
  h["loss_trace"] = number_array(model.loss_trace);
  h["delta_trace"] = number_array(model.delta_trace);
  h["change_trace"] = number_array(model.change_trace);
  write_blobs(h, {{"A", &model.a}, {"B", &model.b}, {"Theta", &model.theta}, {"Gamma", &model.gamma}}, path);
}

Step2Model load_step2_model(const std::filesystem::path& path) {
  const ModelFile f = read_blobs(path, "step2");
  Step2Model m;
  try {
    update_from_json(m.hyper, f.header.at("hyper"), "hyper");
    m.variant_used = variant_from(f.header.at("variant_used").get<std::string>(), "variant_used");
    m.iterations = f.header.at("iterations").get<int>();
    m.converged = f.header.at("converged").get<bool>();
    m.loss_trace = numbers_from(f.header.at("loss_trace"));
    m.delta_trace = numbers_from(f.header.at("delta_trace"));
    m.change_trace = numbers_from(f.header.at("change_trace"));
  } catch (const Json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  m.a = blob(f, "A");
  m.b = blob(f, "B");
  m.theta = blob(f, "Theta");
  m.gamma = blob(f, "Gamma");
  return m;
}

void write_json(const Json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

namespace {

std::string csv_num(double v) {
  if (std::isnan(v)) return "NaN";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_report_csv(const ExperimentReport& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  out << "p0,variant,mrae_dt,mrae_dt_se,mrae_sc,mrae_sc_se,rel_margin_dt,rel_margin_dt_se,rel_margin_sc,"
         "rel_margin_sc_se,coverage,coverage_se,coverage_dt,coverage_sc,half_width_dt,half_width_sc,"
         "rel_half_width_dt,rel_half_width_sc,failures,excluded\n";
  for (const auto& lvl : r.levels) {
    for (const auto& [v, s] : lvl.summary) {
      out << csv_num(lvl.p0) << ',' << '"' << variant_name(v) << '"' << ',' << csv_num(s.mrae_dt.mean) << ','
          << csv_num(s.mrae_dt.se) << ',' << csv_num(s.mrae_sc.mean) << ',' << csv_num(s.mrae_sc.se) << ','
          << csv_num(s.rel_margin_dt.mean) << ',' << csv_num(s.rel_margin_dt.se) << ','
          << csv_num(s.rel_margin_sc.mean) << ',' << csv_num(s.rel_margin_sc.se) << ','
          << csv_num(s.coverage.mean) << ',' << csv_num(s.coverage.se) << ',' << csv_num(s.coverage_dt.mean)
          << ',' << csv_num(s.coverage_sc.mean) << ',' << csv_num(s.half_width_dt.mean) << ','
          << csv_num(s.half_width_sc.mean) << ',' << csv_num(s.rel_half_width_dt.mean) << ','
          << csv_num(s.rel_half_width_sc.mean) << ',' << s.failures << ',' << s.excluded_zero_truth << '\n';
    }
  }
}

void write_row_coverage_csv(const ExperimentReport& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  out << "p0,variant,row,coverage_mean,coverage_se\n";
  for (const auto& lvl : r.levels) {
    for (const auto& [v, s] : lvl.summary) {
      for (Index i = 0; i < s.row_coverage_mean.size(); ++i) {
        out << csv_num(lvl.p0) << ",\"" << variant_name(v) << "\"," << i << ',' << csv_num(s.row_coverage_mean(i))
            << ',' << csv_num(s.row_coverage_se(i)) << '\n';
      }
    }
  }
}

void write_cv_csv(const CvPath& p, const std::string& name, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  out << name << ",cv_mrae";
  const std::size_t folds = p.fold_scores.empty() ? 0 : p.fold_scores.front().size();
  for (std::size_t f = 0; f < folds; ++f) out << ",fold" << f;
  out << '\n';
  for (std::size_t g = 0; g < p.grid.size(); ++g) {
    out << csv_num(p.grid[g]) << ',' << csv_num(p.score[g]);
    for (const double s : p.fold_scores[g]) out << ',' << csv_num(s);
    out << '\n';
  }
}

void write_bic_csv(const BicPath& p, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  out << "p,bic\n";
  for (std::size_t k = 0; k < p.orders.size(); ++k) out << p.orders[k] << ',' << csv_num(p.bic[k]) << '\n';
}

}  // namespace siap
