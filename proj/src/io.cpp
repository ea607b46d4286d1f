#include "ccmi/io.hpp"

#include <openssl/evp.h>

#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include "ccmi/errors.hpp"
#include "json.hpp"

namespace ccmi {

namespace fs = std::filesystem;

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(17) << value;
  return os.str();
}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string where(const fs::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

double parse_real(std::string_view text, const fs::path& path, std::size_t line) {
  const std::string s(text);
  if (s == "inf" || s == "-inf") return s[0] == '-' ? -std::numeric_limits<double>::infinity()
                                                    : std::numeric_limits<double>::infinity();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) {
    throw SchemaError(where(path, line) + ": expected a number, got '" + s + "'");
  }
  return v;
}

template <typename Int>
Int parse_integer(std::string_view text, const fs::path& path, std::size_t line) {
  Int v{};
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (text.empty() || ec != std::errc{} || ptr != last) {
    throw SchemaError(where(path, line) + ": expected an integer, got '" + std::string(text) + "'");
  }
  return v;
}

struct CsvLine {
  std::size_t number;
  std::string text;
};

// Non-empty, non-comment lines with their 1-based line numbers.
std::vector<CsvLine> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open " + path.string());
  std::vector<CsvLine> lines;
  std::string text;
  std::size_t number = 0;
  while (std::getline(in, text)) {
    ++number;
    const auto t = trim(text);
    if (t.empty() || t.front() == '#') continue;
    lines.push_back({number, std::string(t)});
  }
  return lines;
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path() && !path.parent_path().empty()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.imbue(std::locale::classic());
  return out;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw ConfigError("failed writing " + path.string());
}

}  // namespace

// ---------------------------------------------------------------------------
// Calibration

CalibrationRows read_calibration_csv(const fs::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw SchemaError(path.string() + ": missing header");
  const auto header = split(lines.front().text, ',');
  if (header.size() != 2 || header[0] != "label" || header[1] != "score") {
    throw SchemaError(where(path, lines.front().number) + ": header must be 'label,score'");
  }
  CalibrationRows rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = split(lines[i].text, ',');
    if (fields.size() != 2) {
      throw SchemaError(where(path, lines[i].number) + ": expected 2 fields, got " + std::to_string(fields.size()));
    }
    rows.labels.push_back(parse_integer<std::size_t>(fields[0], path, lines[i].number));
    const double score = parse_real(fields[1], path, lines[i].number);
    if (!std::isfinite(score)) throw SchemaError(where(path, lines[i].number) + ": score must be finite");
    rows.scores.push_back(score);
  }
  return rows;
}

void write_calibration_csv(const fs::path& path, const CalibrationRows& rows) {
  auto out = open_output(path);
  out << "label,score\n";
  for (std::size_t i = 0; i < rows.labels.size(); ++i) {
    out << rows.labels[i] << ',' << format_double(rows.scores[i]) << '\n';
  }
  finish(out, path);
}

ParsedCalibration parse_calibration(const fs::path& path, std::optional<std::size_t> num_classes,
                                    std::uint64_t seed, std::optional<double> alpha) {
  const auto rows = read_calibration_csv(path);
  std::size_t k = 0;
  for (std::size_t label : rows.labels) k = std::max(k, label + 1);
  if (num_classes) {
    for (std::size_t i = 0; i < rows.labels.size(); ++i) {
      if (rows.labels[i] >= *num_classes) {
        throw SchemaError(path.string() + ": label " + std::to_string(rows.labels[i]) + " on data row " +
                          std::to_string(i + 1) + " is not below K=" + std::to_string(*num_classes));
      }
    }
    k = *num_classes;
  }
  if (k == 0) throw SchemaError(path.string() + ": no calibration rows");

  Rng rng = derive_stream(seed, streams::kCalibrationUniforms);
  ParsedCalibration parsed{CalibrationSet::from_rows(rows.labels, rows.scores, k, rng), {}, {}};
  parsed.counts = parsed.set.class_counts();
  const std::size_t floor_count = alpha ? minimal_budget(*alpha) : 0;  // ceil(1/alpha) - 1
  for (std::size_t y = 0; y < k; ++y) {
    if (parsed.counts[y] == 0) {
      parsed.warnings.push_back({y, WarningKind::EmptyClass});
    } else if (alpha && parsed.counts[y] < floor_count) {
      parsed.warnings.push_back({y, WarningKind::UndersizedClass});
    }
  }
  return parsed;
}

// ---------------------------------------------------------------------------
// Multi-input

MultiInputTable read_multiinput_csv(const fs::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw SchemaError(path.string() + ": missing header");
  const auto header = split(lines.front().text, ',');
  if (header.size() < 2 || header[0] != "obs") {
    throw SchemaError(where(path, lines.front().number) + ": header must be 'obs,c0,...,c{K-1}'");
  }
  MultiInputTable table;
  table.num_classes = header.size() - 1;
  for (std::size_t y = 0; y < table.num_classes; ++y) {
    if (header[y + 1] != "c" + std::to_string(y)) {
      throw SchemaError(where(path, lines.front().number) + ": column " + std::to_string(y + 1) + " must be 'c" +
                        std::to_string(y) + "'");
    }
  }
  std::set<std::int64_t> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = split(lines[i].text, ',');
    if (fields.size() != table.num_classes + 1) {
      throw SchemaError(where(path, lines[i].number) + ": expected " + std::to_string(table.num_classes + 1) +
                        " fields, got " + std::to_string(fields.size()));
    }
    const auto obs = parse_integer<std::int64_t>(fields[0], path, lines[i].number);
    if (!seen.insert(obs).second) {
      throw SchemaError(where(path, lines[i].number) + ": duplicate obs index " + std::to_string(obs));
    }
    table.obs.push_back(obs);
    for (std::size_t y = 0; y < table.num_classes; ++y) {
      const double v = parse_real(fields[y + 1], path, lines[i].number);
      if (!std::isfinite(v)) throw SchemaError(where(path, lines[i].number) + ": score must be finite");
      table.scores.push_back(v);
    }
  }
  if (table.obs.empty()) throw SchemaError(path.string() + ": no observations");
  return table;
}

void write_multiinput_csv(const fs::path& path, std::size_t num_classes, const std::vector<double>& row_major_scores) {
  if (num_classes == 0 || row_major_scores.size() % num_classes != 0) {
    throw DomainError("score matrix does not have K columns");
  }
  auto out = open_output(path);
  out << "obs";
  for (std::size_t y = 0; y < num_classes; ++y) out << ",c" << y;
  out << '\n';
  const std::size_t m = row_major_scores.size() / num_classes;
  for (std::size_t j = 0; j < m; ++j) {
    out << j;
    for (std::size_t y = 0; y < num_classes; ++y) out << ',' << format_double(row_major_scores[j * num_classes + y]);
    out << '\n';
  }
  finish(out, path);
}

MultiInputScores parse_multiinput(const fs::path& path, std::size_t num_classes, Rng& rng) {
  auto table = read_multiinput_csv(path);
  if (table.num_classes != num_classes) {
    throw SchemaError(path.string() + ": has " + std::to_string(table.num_classes) +
                      " score columns but the calibration has K=" + std::to_string(num_classes));
  }
  const std::size_t m = table.m();
  return MultiInputScores::with_drawn_uniforms(m, num_classes, std::move(table.scores), rng);
}

MultiInputScores parse_multiinput(const fs::path& path, std::size_t num_classes, std::uint64_t seed) {
  Rng rng = derive_stream(seed, streams::kObservationUniforms);
  return parse_multiinput(path, num_classes, rng);
}

std::vector<LabeledInput> read_test_listing(const fs::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw SchemaError(path.string() + ": missing header");
  const auto header = split(lines.front().text, ',');
  if (header.size() != 2 || header[0] != "path" || header[1] != "label") {
    throw SchemaError(where(path, lines.front().number) + ": header must be 'path,label'");
  }
  std::vector<LabeledInput> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = split(lines[i].text, ',');
    if (fields.size() != 2 || fields[0].empty()) {
      throw SchemaError(where(path, lines[i].number) + ": expected 'path,label'");
    }
    fs::path entry{std::string(fields[0])};
    if (entry.is_relative()) entry = path.parent_path() / entry;
    out.push_back({entry, parse_integer<std::size_t>(fields[1], path, lines[i].number)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports and predictions

namespace {
constexpr std::string_view kReportHeader =
    "method,m,alpha,marginal_coverage,coverage_se,avg_size,size_se,min_class_coverage";
}

void emit_report(const EvaluationReport& report, const fs::path& path) {
  auto out = open_output(path);
  out << kReportHeader << '\n';
  for (const auto& r : report.rows) {
    out << r.method << ',' << r.m << ',' << format_double(r.alpha) << ',' << format_double(r.marginal_coverage) << ','
        << format_double(r.coverage_se) << ',' << format_double(r.avg_size) << ',' << format_double(r.size_se) << ','
        << format_double(r.min_class_coverage) << '\n';
  }
  finish(out, path);
}

EvaluationReport parse_report(const fs::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty() || lines.front().text != kReportHeader) {
    throw SchemaError(path.string() + ": not a report file");
  }
  EvaluationReport report;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split(lines[i].text, ',');
    const std::size_t ln = lines[i].number;
    if (f.size() != 8) throw SchemaError(where(path, ln) + ": expected 8 fields");
    report.rows.push_back({std::string(f[0]), parse_integer<std::size_t>(f[1], path, ln), parse_real(f[2], path, ln),
                           parse_real(f[3], path, ln), parse_real(f[4], path, ln), parse_real(f[5], path, ln),
                           parse_real(f[6], path, ln), parse_real(f[7], path, ln)});
  }
  return report;
}

void emit_prediction(const PredictionSet& set, const PredictionHeader& header, const fs::path& path) {
  auto out = open_output(path);
  out << "# method=" << header.method << " alpha=" << format_double(header.alpha) << " m=" << header.m
      << " T=" << header.budget << " seed=" << header.seed << '\n';
  out << "class,included,diagnostic\n";
  for (std::size_t y = 0; y < set.num_classes(); ++y) {
    out << y << ',' << (set.contains(y) ? 1 : 0) << ',' << format_double(set.diagnostics[y]) << '\n';
  }
  finish(out, path);
}

void emit_envelopes(const EnvelopeSample& sample, const fs::path& path) {
  auto out = open_output(path);
  out << "series,id,j,numerator,value\n";
  const auto row = [&](std::string_view series, std::size_t id, std::size_t j, std::size_t numerator) {
    out << series << ',' << id << ',' << j + 1 << ',' << numerator << ','
        << format_double(static_cast<double>(numerator) / static_cast<double>(sample.n)) << '\n';
  };
  for (std::size_t i = 0; i < sample.samples.size(); ++i) {
    for (std::size_t j = 0; j < sample.m; ++j) row("sample", i, j, sample.samples[i].numerators[j]);
  }
  for (std::size_t j = 0; j < sample.m; ++j) row("quantile_envelope", 0, j, sample.quantile_envelope[j]);
  for (std::size_t j = 0; j < sample.m; ++j) row("majority_envelope", 0, j, sample.majority_envelope[j]);
  finish(out, path);
}

// ---------------------------------------------------------------------------
// Config

SyntheticConfig parse_config_text(std::string_view text) {
  SyntheticConfig config;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t number = 0;
  const fs::path name("config");
  while (std::getline(in, raw)) {
    ++number;
    auto line = trim(raw);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = trim(line.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("config line " + std::to_string(number) + ": expected key=value");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    try {
      if (key == "K") {
        config.num_classes = parse_integer<std::size_t>(value, name, number);
      } else if (key == "d") {
        config.dim = parse_integer<std::size_t>(value, name, number);
      } else if (key == "sigma2") {
        config.sigma2 = parse_real(value, name, number);
      } else if (key == "n_calib") {
        config.n_calib = parse_integer<std::size_t>(value, name, number);
      } else if (key == "n_test") {
        config.n_test_multiinputs = parse_integer<std::size_t>(value, name, number);
      } else if (key == "R") {
        config.repetitions = parse_integer<std::size_t>(value, name, number);
      } else if (key == "m_values") {
        config.m_values.clear();
        for (auto item : split(value, ',')) config.m_values.push_back(parse_integer<std::size_t>(item, name, number));
      } else if (key == "alpha") {
        config.alpha = parse_real(value, name, number);
      } else if (key == "methods") {
        config.methods.clear();
        for (auto item : split(value, ',')) {
          Method::parse(item);
          config.methods.emplace_back(item);
        }
      } else if (key == "rho") {
        config.rho = parse_real(value, name, number);
      } else if (key == "seed") {
        config.seed = parse_integer<std::uint64_t>(value, name, number);
      } else if (key == "T") {
        config.mc_budget = parse_integer<std::size_t>(value, name, number);
      } else if (key == "block_size") {
        config.block_size = parse_integer<std::size_t>(value, name, number);
      } else if (key == "envelope_n") {
        config.envelope_n = parse_integer<std::size_t>(value, name, number);
      } else if (key == "envelope_m") {
        config.envelope_m = parse_integer<std::size_t>(value, name, number);
      } else if (key == "envelope_count") {
        config.envelope_count = parse_integer<std::size_t>(value, name, number);
      } else {
        throw ConfigError("config line " + std::to_string(number) + ": unknown key '" + std::string(key) + "'");
      }
    } catch (const SchemaError& e) {
      throw ConfigError(e.what());
    }
  }
  config.validate();
  return config;
}

SyntheticConfig parse_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str());
}

// ---------------------------------------------------------------------------
// Manifests

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 initialisation failed");
  }
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest.data(), &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

std::string utc_timestamp() {
  // SOURCE_DATE_EPOCH pins the clock so whole run directories can be compared byte for byte.
  std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  if (const char* pinned = std::getenv("SOURCE_DATE_EPOCH"); pinned != nullptr && *pinned != '\0') {
    std::int64_t epoch = 0;
    const auto [ptr, ec] = std::from_chars(pinned, pinned + std::strlen(pinned), epoch);
    if (ec == std::errc{} && *ptr == '\0') now = static_cast<std::time_t>(epoch);
  }
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void emit_manifest(const RunManifest& manifest, const fs::path& path) {
  nlohmann::ordered_json j;
  j["command"] = manifest.command;
  j["version"] = manifest.version;
  j["seed"] = manifest.seed;
  j["timestamp"] = manifest.timestamp;
  j["parameters"] = manifest.parameters;
  j["input_digests"] = manifest.input_digests;
  j["output_digests"] = manifest.output_digests;
  auto out = open_output(path);
  out << j.dump(2) << '\n';
  finish(out, path);
}

RunManifest parse_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.version = j.at("version").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.timestamp = j.at("timestamp").get<std::string>();
    m.parameters = j.at("parameters").get<std::map<std::string, std::string>>();
    m.input_digests = j.at("input_digests").get<std::map<std::string, std::string>>();
    m.output_digests = j.at("output_digests").get<std::map<std::string, std::string>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

}  // namespace ccmi
