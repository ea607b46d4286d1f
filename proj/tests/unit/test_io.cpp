#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "ccmi/errors.hpp"
#include "ccmi/io.hpp"

using namespace ccmi;
namespace fs = std::filesystem;

namespace {

class IoTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("ccmi_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write(const std::string& name, const std::string& text) {
    const auto p = dir_ / name;
    std::ofstream(p) << text;
    return p;
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  fs::path dir_;
};

template <typename E, typename F>
std::string error_text(F&& f) {
  try {
    f();
  } catch (const E& e) {
    return e.what();
  }
  return "<no throw>";
}

}  // namespace

TEST(FormatDouble, RoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 1e300, 0.0}) {
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(format_double(std::numeric_limits<double>::quiet_NaN()), "nan");
  EXPECT_EQ(format_double(std::numeric_limits<double>::infinity()), "inf");
}

TEST_F(IoTest, CalibrationCountsPerClass) {
  const auto p = write("cal.csv", "label,score\n0,0.5\n1,0.25\n# comment\n\n0,0.75\n2,1e-3\n0,0.5\n");
  const auto parsed = parse_calibration(p, std::nullopt, 1);
  EXPECT_EQ(parsed.counts, (std::vector<std::size_t>{3, 1, 1}));
  EXPECT_EQ(parsed.set.num_classes(), 3u);
  EXPECT_DOUBLE_EQ(parsed.set[0].scores()[2], 0.75);
  EXPECT_TRUE(parsed.warnings.empty());
  // same seed, same uniforms
  const auto again = parse_calibration(p, std::nullopt, 1);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(parsed.set[0].tie_uniforms()[i], again.set[0].tie_uniforms()[i]);
}

TEST_F(IoTest, CalibrationErrorsCarryLineNumbers) {
  const auto p = write("bad.csv", "label,score\n0,0.5\n1,abc\n");
  const auto msg = error_text<SchemaError>([&] { parse_calibration(p, std::nullopt, 0); });
  EXPECT_NE(msg.find(":3:"), std::string::npos) << msg;
  EXPECT_NE(msg.find("abc"), std::string::npos) << msg;

  EXPECT_THROW(parse_calibration(write("h.csv", "lbl,score\n0,1\n"), std::nullopt, 0), SchemaError);
  EXPECT_THROW(parse_calibration(write("f.csv", "label,score\n0,1,2\n"), std::nullopt, 0), SchemaError);
  EXPECT_THROW(parse_calibration(write("n.csv", "label,score\n0,nan\n"), std::nullopt, 0), SchemaError);
  EXPECT_THROW(parse_calibration(write("e.csv", "label,score\n"), std::nullopt, 0), SchemaError);
  EXPECT_THROW(parse_calibration(write("neg.csv", "label,score\n-1,0.5\n"), std::nullopt, 0), SchemaError);
  EXPECT_THROW(parse_calibration(dir_ / "missing.csv", std::nullopt, 0), SchemaError);
}

TEST_F(IoTest, CalibrationLabelOutOfRange) {
  const auto p = write("cal.csv", "label,score\n0,0.5\n4,0.5\n");
  const auto msg = error_text<SchemaError>([&] { parse_calibration(p, 3, 0); });
  EXPECT_NE(msg.find("label 4"), std::string::npos) << msg;
}

TEST_F(IoTest, CalibrationWarnings) {
  const auto p = write("cal.csv", "label,score\n0,0.5\n0,0.6\n2,0.1\n");
  const auto parsed = parse_calibration(p, 4, 0, 0.1);
  ASSERT_EQ(parsed.counts, (std::vector<std::size_t>{2, 0, 1, 0}));
  const std::vector<ClassWarning> expected{{0, WarningKind::UndersizedClass},
                                           {1, WarningKind::EmptyClass},
                                           {2, WarningKind::UndersizedClass},
                                           {3, WarningKind::EmptyClass}};
  EXPECT_EQ(parsed.warnings, expected);
  const auto no_alpha = parse_calibration(p, 4, 0);
  EXPECT_EQ(no_alpha.warnings.size(), 2u);
}

TEST_F(IoTest, CalibrationRoundTrip) {
  CalibrationRows rows{{2, 0, 1}, {0.1, 1.0 / 3.0, 7e-12}};
  const auto p = dir_ / "sub" / "cal.csv";
  write_calibration_csv(p, rows);
  const auto back = read_calibration_csv(p);
  EXPECT_EQ(back.labels, rows.labels);
  EXPECT_EQ(back.scores, rows.scores);
}

TEST_F(IoTest, MultiInputParse) {
  std::string text = "obs,c0,c1,c2,c3,c4,c5,c6,c7,c8,c9\n";
  for (int j = 0; j < 3; ++j) {
    text += std::to_string(j);
    for (int y = 0; y < 10; ++y) text += "," + std::to_string(0.1 * y + j);
    text += "\n";
  }
  const auto p = write("x.csv", text);
  const auto scores = parse_multiinput(p, 10, std::uint64_t{5});
  EXPECT_EQ(scores.m(), 3u);
  EXPECT_EQ(scores.num_classes(), 10u);
  EXPECT_DOUBLE_EQ(scores.score(2, 4), 2.4);
  const auto again = parse_multiinput(p, 10, std::uint64_t{5});
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(scores.obs_uniform(j), again.obs_uniform(j));

  EXPECT_THROW(parse_multiinput(p, 9, std::uint64_t{5}), SchemaError);
}

TEST_F(IoTest, MultiInputErrors) {
  EXPECT_THROW(read_multiinput_csv(write("a.csv", "obs,c0,c1\n0,1,2\n0,3,4\n")), SchemaError);
  EXPECT_THROW(read_multiinput_csv(write("b.csv", "obs,c0,c1\n0,1\n")), SchemaError);
  EXPECT_THROW(read_multiinput_csv(write("c.csv", "obs,c0,c2\n0,1,2\n")), SchemaError);
  EXPECT_THROW(read_multiinput_csv(write("d.csv", "obs,c0,c1\n")), SchemaError);
  EXPECT_THROW(read_multiinput_csv(write("e.csv", "obs,c0,c1\n0,1,inf\n")), SchemaError);
  const auto msg = error_text<SchemaError>([&] { read_multiinput_csv(write("f.csv", "obs,c0,c1\n0,1,2\n\n1,x,2\n")); });
  EXPECT_NE(msg.find(":4:"), std::string::npos) << msg;
}

TEST_F(IoTest, MultiInputRoundTrip) {
  const std::vector<double> scores{0.1, 0.2, 0.3, 1.0 / 7.0, 0.5, 0.6};
  const auto p = dir_ / "mi.csv";
  write_multiinput_csv(p, 3, scores);
  const auto table = read_multiinput_csv(p);
  EXPECT_EQ(table.num_classes, 3u);
  EXPECT_EQ(table.m(), 2u);
  EXPECT_EQ(table.scores, scores);
}

TEST_F(IoTest, TestListingResolvesRelativePaths) {
  const auto p = write("tests.csv", "path,label\ntests/a.csv,3\n/abs/b.csv,0\n");
  const auto list = read_test_listing(p);
  ASSERT_EQ(list.size(), 2u);
  EXPECT_EQ(list[0].path, dir_ / "tests/a.csv");
  EXPECT_EQ(list[0].label, 3u);
  EXPECT_EQ(list[1].path, fs::path("/abs/b.csv"));
  EXPECT_THROW(read_test_listing(write("bad.csv", "file,label\nx,1\n")), SchemaError);
}

TEST_F(IoTest, ReportRoundTrip) {
  EvaluationReport report;
  report.rows.push_back({"maj", 1, 0.1, 0.9, 0.01, 2.5, 0.05, 0.8});
  report.rows.push_back({"area:2", 20, 0.05, 1.0 / 3.0, 0.0, 10.0, 0.0, 0.25});
  const auto p = dir_ / "report.csv";
  emit_report(report, p);
  EXPECT_EQ(slurp(p).substr(0, slurp(p).find('\n')),
            "method,m,alpha,marginal_coverage,coverage_se,avg_size,size_se,min_class_coverage");
  EXPECT_EQ(parse_report(p).rows, report.rows);
  EXPECT_THROW(parse_report(write("x.csv", "a,b\n")), SchemaError);
}

TEST_F(IoTest, PredictionFile) {
  PredictionSet set;
  set.members = {0, 2};
  set.diagnostics = {0.5, 0.0, 0.25};
  const auto p = dir_ / "pred.csv";
  emit_prediction(set, {"maj", 0.1, 3, 999, 7}, p);
  const auto text = slurp(p);
  EXPECT_EQ(text.substr(0, 1), "#");
  EXPECT_NE(text.find("method=maj"), std::string::npos);
  EXPECT_NE(text.find("seed=7"), std::string::npos);
  EXPECT_NE(text.find("class,included,diagnostic\n0,1,0.5\n1,0,0\n2,1,0.25\n"), std::string::npos) << text;
}

TEST_F(IoTest, EnvelopeFile) {
  const auto env = sample_envelopes(20, 3, 4, 0.1, 99, 1);
  const auto p = dir_ / "env.csv";
  emit_envelopes(env, p);
  const auto text = slurp(p);
  EXPECT_EQ(text.substr(0, text.find('\n')), "series,id,j,numerator,value");
  std::size_t lines = 0;
  for (char c : text) lines += c == '\n';
  EXPECT_EQ(lines, 1u + 4 * 3 + 3 + 3);
}

TEST(Config, ParsesKeys) {
  const auto c = parse_config_text(
      "# benchmark\nK=5\nd = 3\nsigma2=2.5\nn_calib=400\nn_test=10\nR=50\nm_values=1, 4,8\n"
      "alpha=0.2\nmethods=maj,area:2\nrho=0.3 # correlated\nseed=11\nT=199\nblock_size=25\n");
  EXPECT_EQ(c.num_classes, 5u);
  EXPECT_EQ(c.dim, 3u);
  EXPECT_DOUBLE_EQ(c.sigma2, 2.5);
  EXPECT_EQ(c.n_calib, 400u);
  EXPECT_EQ(c.n_test_multiinputs, 10u);
  EXPECT_EQ(c.repetitions, 50u);
  EXPECT_EQ(c.m_values, (std::vector<std::size_t>{1, 4, 8}));
  EXPECT_DOUBLE_EQ(c.alpha, 0.2);
  EXPECT_EQ(c.methods, (std::vector<std::string>{"maj", "area:2"}));
  EXPECT_DOUBLE_EQ(c.rho, 0.3);
  EXPECT_EQ(c.seed, 11u);
  EXPECT_EQ(c.mc_budget, 199u);
  EXPECT_EQ(c.block_size, 25u);
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config_text("bogus=1\n"), ConfigError);
  EXPECT_THROW(parse_config_text("K\n"), ConfigError);
  EXPECT_THROW(parse_config_text("K=two\n"), ConfigError);
  EXPECT_THROW(parse_config_text("methods=maj,vote\n"), ConfigError);
  EXPECT_THROW(parse_config_text("alpha=0.1\nT=5\n"), ConfigError);
  EXPECT_THROW(parse_config_file("/nonexistent/cfg.txt"), ConfigError);
}

TEST_F(IoTest, Sha256KnownVector) {
  EXPECT_EQ(sha256_file(write("abc.txt", "abc")),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_file(write("empty.txt", "")),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_F(IoTest, ManifestRoundTrip) {
  RunManifest m;
  m.command = "simulate";
  m.seed = 42;
  m.timestamp = "2020-01-01T00:00:00Z";
  m.parameters = {{"alpha", "0.1"}, {"K", "10"}};
  m.input_digests = {{"cfg.txt", "00ff"}};
  m.output_digests = {{"report.csv", "abcd"}};
  const auto p = dir_ / "manifest.json";
  emit_manifest(m, p);
  const auto back = parse_manifest(p);
  EXPECT_EQ(back.command, m.command);
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.version, std::string(kVersion));
  EXPECT_EQ(back.timestamp, m.timestamp);
  EXPECT_EQ(back.parameters, m.parameters);
  EXPECT_EQ(back.input_digests, m.input_digests);
  EXPECT_EQ(back.output_digests, m.output_digests);
  EXPECT_THROW(parse_manifest(write("bad.json", "{not json")), SchemaError);
}

TEST(Timestamp, HonoursSourceDateEpoch) {
  ::setenv("SOURCE_DATE_EPOCH", "86400", 1);
  EXPECT_EQ(utc_timestamp(), "1970-01-02T00:00:00Z");
  ::unsetenv("SOURCE_DATE_EPOCH");
  const auto now = utc_timestamp();
  EXPECT_EQ(now.size(), 20u);
  EXPECT_EQ(now.back(), 'Z');
}
