#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "siap/ablation.hpp"
#include "siap/conformal.hpp"
#include "siap/matrix_core.hpp"
#include "siap/step1.hpp"
#include "siap/step2.hpp"
#include "siap/synthetic.hpp"
#include "siap/tuning.hpp"

namespace siap {

using Json = nlohmann::ordered_json;

/// Finite numbers as numbers, NaN as null, infinities as "inf" / "-inf".
Json json_number(double v);
double number_from_json(const Json& j);

Json to_json(const Step1Hyper& h);
Json to_json(const Step2Hyper& h);
Json to_json(const BasisSpec& b);
Json to_json(const SyntheticSpec& s);
Json to_json(const MissingnessPattern& p);
Json to_json(const CalibrationSplit& s);
Json to_json(const RowQuantiles& q);
Json to_json(const CoverageSummary& c);
Json to_json(const ConvergenceReport& r);
Json to_json(const MeanSe& s);
/// `timings` adds per-variant wall-clock seconds, which differ between runs.
Json to_json(const ExperimentReport& r, bool per_replicate = true, bool timings = false);
Json to_json(const CvPath& p);
Json to_json(const BicPath& p);

/// Overlays fields present in `j` onto `h`; unknown keys raise ConfigError
/// naming `where.key`.
void update_from_json(Step1Hyper& h, const Json& j, const std::string& where);
void update_from_json(Step2Hyper& h, const Json& j, const std::string& where);
void update_from_json(BasisSpec& b, const Json& j, const std::string& where);
void update_from_json(SyntheticSpec& s, const Json& j, const std::string& where);

MissingnessPattern pattern_from_json(const Json& j);
CalibrationSplit split_from_json(const Json& j);

/// Model files: one JSON header line, then little-endian float64 blobs in
/// column-major order at the offsets the header lists.
void save_model(const Step1Model& model, const std::filesystem::path& path);
Step1Model load_step1_model(const std::filesystem::path& path);
void save_model(const Step2Model& model, const std::filesystem::path& path);
Step2Model load_step2_model(const std::filesystem::path& path);

void write_json(const Json& j, const std::filesystem::path& path);
Json read_json(const std::filesystem::path& path);

/// Flat per-variant summary table of a report.
void write_report_csv(const ExperimentReport& r, const std::filesystem::path& path);
/// Per-row coverage means of every variant and level.
void write_row_coverage_csv(const ExperimentReport& r, const std::filesystem::path& path);
void write_cv_csv(const CvPath& p, const std::string& name, const std::filesystem::path& path);
void write_bic_csv(const BicPath& p, const std::filesystem::path& path);

}  // namespace siap
