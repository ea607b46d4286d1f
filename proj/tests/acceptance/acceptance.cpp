// End-to-end acceptance checks. Each criterion prints one PASS/FAIL line plus
// the measured quantities; the process exits nonzero if any criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ccmi/aggregation.hpp"
#include "ccmi/conformal.hpp"
#include "ccmi/discrete_dist.hpp"
#include "ccmi/experiments.hpp"
#include "oracles.hpp"

using namespace ccmi;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kChiSquareLevel = 1e-3;
constexpr double kTvTolerance = 0.02;
const double kCoverageFloor = 0.9 - 3.0 * std::sqrt(0.09 / 2000.0);  // 0.8799...
constexpr double kTvBoundSlack = 1e-12;

constexpr double kLimitC1 = 5.0;
constexpr double kLimitC2 = 30.0;
constexpr double kLimitC3 = 60.0;
constexpr double kLimitC5 = 600.0;
constexpr double kLimitC9 = 1.0;

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS" : "FAIL") << " criterion " << id << ": " << detail << std::endl;
  if (!pass) ++failures;
}

void info(const std::string& text) { std::cout << "  " << text << '\n'; }

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::vector<double> uniform_probs(std::size_t n) { return std::vector<double>(n, 1.0 / static_cast<double>(n)); }

// ---------------------------------------------------------------------------

void criterion1() {
  Stopwatch clock;
  bool pass = true;
  std::string detail;
  const std::vector<std::pair<std::size_t, std::size_t>> cases{{2, 2}, {3, 3}, {4, 2}};
  const std::map<std::pair<std::size_t, std::size_t>, std::size_t> expected_size{
      {{2, 2}, 6}, {{3, 3}, 20}, {{4, 2}, 15}};
  for (const auto& [n, m] : cases) {
    const auto grid_points = oracle::enumerate_grid(n, m);
    std::map<std::vector<std::size_t>, std::size_t> index;
    for (std::size_t i = 0; i < grid_points.size(); ++i) index[grid_points[i]] = i;
    const TrajectoryGrid grid(n, m);
    const bool size_ok = grid_points.size() == expected_size.at({n, m}) && grid.cardinality() == grid_points.size();

    std::vector<std::size_t> counts(grid_points.size());
    Rng rng = derive_stream(0, "acceptance-1", {n, m});
    bool on_grid = true;
    for (int r = 0; r < 100000; ++r) {
      const auto t = sample_trajectory(grid, rng);
      const auto it = index.find(t.numerators);
      if (it == index.end()) {
        on_grid = false;
        continue;
      }
      ++counts[it->second];
    }
    const auto chi = oracle::chi_square(counts, uniform_probs(grid_points.size()));
    pass = pass && size_ok && on_grid && chi.p_value >= kChiSquareLevel;
    detail += "(" + std::to_string(n) + "," + std::to_string(m) + ") |A|=" + std::to_string(grid_points.size()) +
              " p=" + fmt(chi.p_value) + "; ";
  }
  const double t = clock.seconds();
  pass = pass && t < kLimitC1;
  report(1, pass, detail + "time " + fmt(t, 3) + "s");
}

void criterion2() {
  Stopwatch clock;
  const std::size_t n = 100, m = 10;
  const TrajectoryGrid grid(n, m);
  Rng rng = derive_stream(0, "acceptance-2");
  std::vector<std::vector<double>> empirical(m + 1, std::vector<double>(n + 1));
  const int draws = 50000;
  std::vector<std::size_t> buf(m);
  for (int r = 0; r < draws; ++r) {
    sample_trajectory_into(grid, rng, buf);
    for (std::size_t j : {1u, 5u, 10u}) empirical[j][buf[j - 1]] += 1.0 / draws;
  }
  bool pass = true;
  std::string detail;
  for (std::size_t j : {1u, 5u, 10u}) {
    const auto exact = oracle::betabin_pmf_table(static_cast<int>(n), static_cast<int>(j), static_cast<int>(m + 1 - j));
    const double tv = oracle::total_variation(empirical[j], exact);
    pass = pass && tv < kTvTolerance;
    detail += "j=" + std::to_string(j) + " TV=" + fmt(tv) + "; ";
  }
  const double t = clock.seconds();
  pass = pass && t < kLimitC2;
  report(2, pass, detail + "time " + fmt(t, 3) + "s");
}

void criterion3() {
  Stopwatch clock;
  const std::size_t n = 20, m = 5;
  const std::vector<double> support{0.0, 1.0, 2.0, 3.0, 4.0};
  const std::vector<double> weights{0.1, 0.3, 0.2, 0.25, 0.15};
  std::discrete_distribution<std::size_t> law(weights.begin(), weights.end());
  Rng rng = derive_stream(0, "acceptance-3");
  std::vector<std::vector<std::size_t>> counts(m, std::vector<std::size_t>(n + 1));
  for (int r = 0; r < 20000; ++r) {
    std::vector<double> cal(n), test(m);
    for (auto& s : cal) s = support[law(rng)];
    for (auto& s : test) s = support[law(rng)];
    const auto cc = ClassCalibration::with_drawn_uniforms(0, cal, rng);
    const auto mi = MultiInputScores::with_drawn_uniforms(m, 1, test, rng);
    const auto traj = pvalue_trajectory(cc, mi, 0).trajectory;
    for (std::size_t j = 0; j < m; ++j) ++counts[j][traj.numerators[j]];
  }
  bool pass = true;
  std::string detail;
  for (std::size_t j = 1; j <= m; ++j) {
    const auto probs = oracle::betabin_pmf_table(static_cast<int>(n), static_cast<int>(j), static_cast<int>(m + 1 - j));
    const auto chi = oracle::chi_square(counts[j - 1], probs);
    pass = pass && chi.p_value >= kChiSquareLevel;
    detail += "j=" + std::to_string(j) + " p=" + fmt(chi.p_value) + "; ";
  }
  const double t = clock.seconds();
  pass = pass && t < kLimitC3;
  report(3, pass, detail + "time " + fmt(t, 3) + "s");
}

void criterion4() {
  const std::size_t n = 50, m = 10;
  const double alpha = 0.1;
  const std::size_t r = floor_times(n + 1, alpha);  // 5
  std::normal_distribution<double> z;
  Rng rng = derive_stream(0, "acceptance-4");
  std::vector<std::size_t> counts(m + 1);
  for (int rep = 0; rep < 20000; ++rep) {
    std::vector<double> cal(n), test(m);
    for (auto& s : cal) s = z(rng);
    for (auto& s : test) s = z(rng);
    std::vector<ClassCalibration> classes;
    classes.push_back(ClassCalibration::with_drawn_uniforms(0, cal, rng));
    const CalibrationSet cals(std::move(classes));
    const auto mi = MultiInputScores::with_drawn_uniforms(m, 1, test, rng);
    ++counts[vote_counts(cals, mi, alpha)[0]];
  }
  const auto probs = oracle::betabin_pmf_table(static_cast<int>(m), static_cast<int>(n + 1 - r), static_cast<int>(r));
  const auto chi = oracle::chi_square(counts, probs);
  report(4, chi.p_value >= kChiSquareLevel,
         "BetaBin(10," + std::to_string(n + 1 - r) + "," + std::to_string(r) + ") chi2=" + fmt(chi.statistic) +
             " dof=" + std::to_string(chi.dof) + " p=" + fmt(chi.p_value));
}

// Criteria 5-7 share one run of the default benchmark.
void criteria5to7() {
  SyntheticConfig config;  // K=10, d=6, sigma2=3, n=1000, alpha=0.1, R=2000, m in {1,2,5,10,20}
  Stopwatch clock;
  const auto result = run_benchmark(config);
  const double t = clock.seconds();
  info("benchmark seed " + std::to_string(config.seed) + ", smallest class count " +
       std::to_string(result.min_class_count) + ", " + fmt(t, 3) + "s");
  for (const auto& row : result.rows) {
    info(row.method + " m=" + std::to_string(row.m) + " coverage=" + fmt(row.marginal_coverage) + " (se " +
         fmt(row.coverage_se, 2) + ") size=" + fmt(row.avg_size));
  }
  const auto& row = [&](const std::string& method, std::size_t m) -> const ReportRow& {
    return result.row(method, m, config.alpha);
  };

  // 5
  {
    bool pass = t < kLimitC5;
    std::string failed;
    for (const char* method : {"maj", "exch-maj", "betabin", "quantile", "area:1", "area:2", "lq:2", "bonferroni",
                               "simes"}) {
      for (std::size_t m : config.m_values) {
        if (row(method, m).marginal_coverage < kCoverageFloor) {
          pass = false;
          failed += std::string(method) + "@m=" + std::to_string(m) + "=" + fmt(row(method, m).marginal_coverage) + " ";
        }
      }
    }
    for (std::size_t m : config.m_values) {
      const double slack = static_cast<double>(config.num_classes) * static_cast<double>(m - 1) *
                           std::min(1.0, config.alpha * static_cast<double>(m)) /
                           static_cast<double>(config.n_calib + 1);
      const double floor = kCoverageFloor - slack;
      if (row("binomial", m).marginal_coverage < floor) {
        pass = false;
        failed += "binomial@m=" + std::to_string(m) + "=" + fmt(row("binomial", m).marginal_coverage) + "<" +
                  fmt(floor) + " ";
      }
    }
    report(5, pass,
           "floor " + fmt(kCoverageFloor) + (failed.empty() ? std::string(", all methods above") : ", below: " + failed) +
               "; time " + fmt(t, 3) + "s");
  }

  // 6
  {
    const double maj = row("maj", 20).avg_size;
    const double lq = row("lq:2", 20).avg_size;
    const double bb = row("betabin", 20).avg_size;
    bool pass = lq <= maj && bb <= maj;
    std::string detail = "m=20 sizes lq:2=" + fmt(lq) + " betabin=" + fmt(bb) + " maj=" + fmt(maj) + "; m=1 -> m=20:";
    for (const char* method : {"quantile", "area:1", "area:2", "lq:2", "bonferroni", "simes"}) {
      const double s1 = row(method, 1).avg_size, s20 = row(method, 20).avg_size;
      const bool shrinks = s20 < s1;
      pass = pass && shrinks;
      detail += std::string(" ") + method + " " + fmt(s1) + "->" + fmt(s20) + (shrinks ? "" : "(not smaller)");
    }
    report(6, pass, detail);
  }

  // 7
  {
    const double d1 = row("naive-direct", 1).avg_size, d20 = row("naive-direct", 20).avg_size;
    bool pass = d20 > d1;
    std::string detail = "naive-direct size " + fmt(d1) + "->" + fmt(d20) + "; naive-grouped coverage";
    for (std::size_t m : config.m_values) {
      if (result.min_class_count / m < 9) continue;
      const double cov = row("naive-grouped", m).marginal_coverage;
      pass = pass && cov >= kCoverageFloor;
      detail += " m=" + std::to_string(m) + ":" + fmt(cov);
    }
    const double g20 = row("naive-grouped", 20).avg_size, lq20 = row("lq:2", 20).avg_size;
    pass = pass && g20 > lq20;
    report(7, pass, detail + "; m=20 size naive-grouped=" + fmt(g20) + " vs lq:2=" + fmt(lq20));
  }
}

void criterion8() {
  SyntheticConfig config;
  config.rho = 0.9;
  config.m_values = {10};
  config.methods = {"maj", "lq:2"};
  const auto result = run_benchmark(config);
  const auto& lq = result.row("lq:2", 10, config.alpha);
  const auto& maj = result.row("maj", 10, config.alpha);
  const bool drop = lq.marginal_coverage < 0.9 - 3.0 * lq.coverage_se;
  const bool maj_ok = maj.marginal_coverage >= kCoverageFloor;
  report(8, drop && maj_ok,
         "rho=0.9 m=10: lq:2 coverage " + fmt(lq.marginal_coverage) + " (se " + fmt(lq.coverage_se, 2) +
             ", needs < " + fmt(0.9 - 3.0 * lq.coverage_se) + "), maj coverage " + fmt(maj.marginal_coverage));
}

void criterion9() {
  Stopwatch clock;
  bool pass = true;
  double worst_margin = 1.0;
  int cases = 0;
  for (int n : {19, 49, 99}) {
    for (double alpha : {0.05, 0.1, 0.2}) {
      const int k = static_cast<int>(ceil_times(static_cast<std::size_t>(n + 1), 1.0 - alpha));
      for (int m = 1; m <= 10; ++m) {
        const auto bin = oracle::binomial_pmf_table(m, static_cast<double>(k) / (n + 1));
        const auto bb = oracle::betabin_pmf_table(m, k, n + 1 - k);
        const double tv = oracle::total_variation(bin, bb);
        const double bound = tv_bound(m, n, alpha);
        worst_margin = std::min(worst_margin, bound - tv);
        pass = pass && tv <= bound + kTvBoundSlack;
        ++cases;
      }
    }
  }
  const double t = clock.seconds();
  pass = pass && t < kLimitC9;
  report(9, pass,
         std::to_string(cases) + " cases, smallest bound - TV = " + fmt(worst_margin) + "; time " + fmt(t, 3) + "s");
}

// --- determinism through the CLI ---------------------------------------------

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CCMI_CLI_PATH) + " " + args + " >/dev/null";
  const int status = std::system(cmd.c_str());
  const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  if (code != 0) info("exit " + std::to_string(code) + " from: ccmi " + args);
  return code;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    files[fs::relative(entry.path(), dir).string()] = ss.str();
  }
  return files;
}

void criterion10() {
  ::setenv("SOURCE_DATE_EPOCH", "1700000000", 1);
  const fs::path root = fs::temp_directory_path() / "ccmi_acceptance_10";
  fs::remove_all(root);
  fs::create_directories(root / "in");
  {
    std::ofstream(root / "in" / "cfg.txt") << "R=300\nn_calib=500\nm_values=1,5\nT=999\nblock_size=50\n"
                                              "methods=maj,exch-maj,betabin,binomial,quantile,area:2,lq:2,simes,"
                                              "naive-direct,naive-grouped\n";
  }
  const fs::path out = root / "out";
  const std::string simulate = "simulate --config " + (root / "in" / "cfg.txt").string() + " --seed 7 --emit-data --out " +
                               out.string();
  auto predict = [&](const std::string& method, const std::string& file) {
    return "predict --calibration " + (out / "calibration.csv").string() + " --test " +
           (out / "tests" / "m005_00100.csv").string() + " --alpha 0.1 --T 999 --K 10 --seed 11 --method " + method +
           " --out " + (out / "pred" / file).string();
  };

  std::vector<std::map<std::string, std::string>> runs;
  bool all_ok = true;
  for (int attempt = 0; attempt < 2; ++attempt) {
    fs::remove_all(out);
    all_ok = all_ok && run_cli(simulate) == 0;
    for (const auto& [method, file] : std::vector<std::pair<std::string, std::string>>{
             {"maj", "maj.csv"}, {"area --q 2", "area2.csv"}, {"lq --q 2", "lq2.csv"}, {"naive-grouped", "ng.csv"}}) {
      all_ok = all_ok && run_cli(predict(method, file)) == 0;
    }
    runs.push_back(snapshot(out));
  }
  std::string differing;
  for (const auto& [name, bytes] : runs[0]) {
    const auto it = runs[1].find(name);
    if (it == runs[1].end() || it->second != bytes) differing += name + " ";
  }
  const bool same_files = runs[0].size() == runs[1].size();
  fs::remove_all(root);
  report(10, all_ok && same_files && differing.empty(),
         std::to_string(runs[0].size()) + " output files compared" +
             (differing.empty() ? std::string(", all byte-identical") : ", differing: " + differing) +
             (all_ok ? "" : "; a CLI run failed"));
}

}  // namespace

int main() {
  const std::vector<std::function<void()>> steps{criterion1, criterion2, criterion3, criterion4, criteria5to7,
                                                 criterion8, criterion9, criterion10};
  for (const auto& step : steps) {
    try {
      step();
    } catch (const std::exception& e) {
      std::cout << "FAIL exception: " << e.what() << std::endl;
      ++failures;
    }
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << '\n';
  return failures == 0 ? 0 : 1;
}
