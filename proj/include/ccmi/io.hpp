#pragma once

// File formats and run bookkeeping. CSV with a header row is the only data
// format; floating-point values are written with 17 significant digits so a
// parse of an emitted file reproduces the in-memory values exactly.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ccmi/conformal.hpp"
#include "ccmi/experiments.hpp"
#include "ccmi/prediction_set.hpp"

namespace ccmi {

inline constexpr std::string_view kVersion = "0.1.0";

/// Shortest round-trip-safe text for a double (17 significant digits).
std::string format_double(double value);

// --- calibration files: `label,score` --------------------------------------

CalibrationRows read_calibration_csv(const std::filesystem::path& path);
void write_calibration_csv(const std::filesystem::path& path, const CalibrationRows& rows);

struct ParsedCalibration {
  CalibrationSet set;
  std::vector<std::size_t> counts;
  /// Empty classes, and (when alpha is given) classes with n_y < ceil(1/alpha) - 1.
  std::vector<ClassWarning> warnings;
};

/// Reads a calibration file and draws tie uniforms from the run seed's
/// "calibration-uniforms" stream. K defaults to 1 + the largest label.
ParsedCalibration parse_calibration(const std::filesystem::path& path, std::optional<std::size_t> num_classes,
                                    std::uint64_t seed, std::optional<double> alpha = std::nullopt);

// --- multi-input files: `obs,c0,...,c{K-1}` --------------------------------

struct MultiInputTable {
  std::size_t num_classes = 0;
  std::vector<std::int64_t> obs;
  std::vector<double> scores;  // rows x K, row-major

  std::size_t m() const noexcept { return obs.size(); }
};

MultiInputTable read_multiinput_csv(const std::filesystem::path& path);
void write_multiinput_csv(const std::filesystem::path& path, std::size_t num_classes,
                          const std::vector<double>& row_major_scores);

/// Reads a multi-input file, checks it has K score columns, and draws the
/// observation uniforms from `rng`.
MultiInputScores parse_multiinput(const std::filesystem::path& path, std::size_t num_classes, Rng& rng);
/// Same, with uniforms from the run seed's "observation-uniforms" stream.
MultiInputScores parse_multiinput(const std::filesystem::path& path, std::size_t num_classes, std::uint64_t seed);

// --- multi-input listings for `evaluate`: `path,label` ---------------------

struct LabeledInput {
  std::filesystem::path path;  // resolved against the listing's directory
  std::size_t label = 0;
};
std::vector<LabeledInput> read_test_listing(const std::filesystem::path& path);

// --- reports and predictions -----------------------------------------------

void emit_report(const EvaluationReport& report, const std::filesystem::path& path);
/// Inverse of emit_report for the per-row columns.
EvaluationReport parse_report(const std::filesystem::path& path);

struct PredictionHeader {
  std::string method;
  double alpha = 0.0;
  std::size_t m = 0;
  std::size_t budget = 0;
  std::uint64_t seed = 0;
};

/// `# method=... alpha=... m=... T=... seed=...` then `class,included,diagnostic`.
void emit_prediction(const PredictionSet& set, const PredictionHeader& header, const std::filesystem::path& path);

void emit_envelopes(const EnvelopeSample& sample, const std::filesystem::path& path);

// --- simulate config: flat key=value ----------------------------------------

SyntheticConfig parse_config_text(std::string_view text);
SyntheticConfig parse_config_file(const std::filesystem::path& path);

// --- manifests ---------------------------------------------------------------

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

struct RunManifest {
  std::string command;
  std::map<std::string, std::string> parameters;
  std::map<std::string, std::string> input_digests;   // path -> sha256
  std::map<std::string, std::string> output_digests;  // path -> sha256
  std::uint64_t seed = 0;
  std::string version{kVersion};
  std::string timestamp;  // ISO-8601 UTC
};

/// Current time as YYYY-MM-DDTHH:MM:SSZ, or SOURCE_DATE_EPOCH when set.
std::string utc_timestamp();
void emit_manifest(const RunManifest& manifest, const std::filesystem::path& path);
RunManifest parse_manifest(const std::filesystem::path& path);

}  // namespace ccmi
