// ccmi: command-line front end.
//
//   ccmi dist betabin {pmf|cdf|quantile} --m M --a A --b B [--k K | --alpha A]
//   ccmi dist binomial {pmf|cdf|quantile} --m M --p P [--k K | --alpha A]
//   ccmi dist sample-traj --n N --m M --count C --seed S
//   ccmi predict --calibration FILE --test FILE --alpha A --method NAME [--q Q] [--T N] --seed S --out FILE
//   ccmi simulate --config FILE --out DIR [--seed S] [--emit-data]
//   ccmi evaluate --calibration FILE --tests LISTING --alpha A --methods a,b,... [--T N] --seed S --out FILE
//
// Exit codes: 0 success, 2 schema/config error, 3 numeric/domain error.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ccmi/aggregation.hpp"
#include "ccmi/conformal.hpp"
#include "ccmi/discrete_dist.hpp"
#include "ccmi/errors.hpp"
#include "ccmi/experiments.hpp"
#include "ccmi/io.hpp"
#include "ccmi/seeding.hpp"

namespace fs = std::filesystem;
using namespace ccmi;

namespace {

constexpr int kExitSchema = 2;
constexpr int kExitDomain = 3;

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ",") + s;
  return out;
}

void report_warnings(const std::vector<ClassWarning>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: class " << w.label << ": " << to_string(w.kind) << '\n';
}

fs::path manifest_path(const fs::path& out) { return fs::path(out.string() + ".manifest.json"); }

// --- dist ---------------------------------------------------------------------

struct DistArgs {
  std::string op;
  std::int64_t m = 0;
  std::int64_t a = 0;
  std::int64_t b = 0;
  double p = 0.0;
  std::optional<std::int64_t> k;
  std::optional<double> alpha;
};

void print_value(const DistArgs& args, const auto& pmf, const auto& cdf, const auto& quantile) {
  if (args.op == "quantile") {
    if (!args.alpha) throw ConfigError("quantile needs --alpha");
    std::cout << quantile(*args.alpha) << '\n';
    return;
  }
  if (!args.k) throw ConfigError(args.op + " needs --k");
  std::cout << format_double(args.op == "pmf" ? pmf(*args.k) : cdf(*args.k)) << '\n';
}

void run_betabin(const DistArgs& args) {
  const BetaBinomialDist dist(args.m, args.a, args.b);
  print_value(
      args, [&](std::int64_t k) { return dist.pmf(k); }, [&](std::int64_t k) { return dist.cdf(k); },
      [&](double a) { return dist.upper_quantile(a); });
}

void run_binomial(const DistArgs& args) {
  print_value(
      args, [&](std::int64_t k) { return binomial_pmf(args.m, args.p, k); },
      [&](std::int64_t k) { return binomial_cdf(args.m, args.p, k); },
      [&](double a) { return binomial_upper_quantile(args.m, args.p, a); });
}

struct TrajArgs {
  std::size_t n = 0;
  std::size_t m = 0;
  std::size_t count = 0;
  std::uint64_t seed = 0;
};

void run_sample_traj(const TrajArgs& args) {
  const TrajectoryGrid grid(args.n, args.m);
  Rng rng = derive_stream(args.seed, streams::kTrajectorySample, {args.n, args.m});
  std::vector<std::size_t> buf(args.m);
  std::string line;
  for (std::size_t i = 0; i < args.count; ++i) {
    sample_trajectory_into(grid, rng, buf);
    line.clear();
    for (std::size_t j = 0; j < buf.size(); ++j) {
      if (j > 0) line += ' ';
      line += std::to_string(buf[j]);
    }
    std::cout << line << '\n';
  }
}

// --- predict ------------------------------------------------------------------

struct PredictArgs {
  fs::path calibration;
  fs::path test;
  double alpha = 0.1;
  std::string method;
  std::string q;
  std::size_t budget = 9999;
  std::uint64_t seed = 0;
  fs::path out;
  std::optional<std::size_t> num_classes;
};

Method resolve_method(const std::string& name, const std::string& q) {
  if (!q.empty()) {
    if (name != "area" && name != "lq") throw ConfigError("--q only applies to area and lq");
    return Method::parse(name + ":" + q);
  }
  return Method::parse(name);
}

void run_predict(const PredictArgs& args) {
  const Method method = resolve_method(args.method, args.q);
  const auto parsed = parse_calibration(args.calibration, args.num_classes, args.seed, args.alpha);
  report_warnings(parsed.warnings);
  const std::size_t k = parsed.set.num_classes();
  const auto test = parse_multiinput(args.test, k, args.seed);
  const std::size_t m = test.m();

  std::optional<CalibratedThresholds> thresholds;
  if (method.kind == MethodKind::PValueScore) {
    thresholds.emplace(calibrate_thresholds(method.spec, parsed.set, m, args.alpha, args.budget, args.seed));
  }
  std::optional<CalibrationSet> grouped;
  if (method.kind == MethodKind::NaiveGrouped) {
    Rng rng = derive_stream(args.seed, streams::kGrouping, {m});
    grouped.emplace(group_calibration(parsed.set, m, rng));
  }
  const auto set = apply_method(method, parsed.set, test, args.alpha, thresholds ? &*thresholds : nullptr,
                                grouped ? &*grouped : nullptr);

  emit_prediction(set, {method.name(), args.alpha, m, args.budget, args.seed}, args.out);

  RunManifest manifest;
  manifest.command = "predict";
  manifest.seed = args.seed;
  manifest.timestamp = utc_timestamp();
  manifest.parameters = {{"method", method.name()},       {"alpha", format_double(args.alpha)},
                         {"T", std::to_string(args.budget)}, {"K", std::to_string(k)},
                         {"m", std::to_string(m)},          {"seed", std::to_string(args.seed)},
                         {"calibration", args.calibration.string()}, {"test", args.test.string()},
                         {"out", args.out.string()}};
  manifest.input_digests = {{args.calibration.string(), sha256_file(args.calibration)},
                            {args.test.string(), sha256_file(args.test)}};
  manifest.output_digests = {{args.out.string(), sha256_file(args.out)}};
  emit_manifest(manifest, manifest_path(args.out));
}

// --- simulate -----------------------------------------------------------------

struct SimulateArgs {
  fs::path config;
  fs::path out;
  std::optional<std::uint64_t> seed;
  bool emit_data = false;
};

void export_synthetic(const SyntheticConfig& config, const fs::path& dir, std::vector<fs::path>& written) {
  Rng rng = derive_stream(config.seed, streams::kSyntheticExport);
  const auto payload = generate_synthetic(config, rng);
  write_calibration_csv(dir / "calibration.csv", payload.calibration);
  written.push_back(dir / "calibration.csv");

  fs::create_directories(dir / "tests");
  std::ofstream listing(dir / "tests.csv", std::ios::binary | std::ios::trunc);
  listing << "path,label\n";
  for (std::size_t i = 0; i < payload.tests.size(); ++i) {
    const auto& t = payload.tests[i];
    char name[64];
    std::snprintf(name, sizeof name, "tests/m%03zu_%05zu.csv", t.m, i);
    write_multiinput_csv(dir / name, t.num_classes, t.scores);
    listing << name << ',' << t.label << '\n';
  }
  listing.close();
  if (!listing) throw ConfigError("failed writing " + (dir / "tests.csv").string());
  written.push_back(dir / "tests.csv");
}

void run_simulate(const SimulateArgs& args) {
  SyntheticConfig config = parse_config_file(args.config);
  if (args.seed) config.seed = *args.seed;
  config.validate();
  fs::create_directories(args.out);

  const auto report = run_benchmark(config);
  std::vector<fs::path> written{args.out / "report.csv", args.out / "trajectories_sample.csv"};
  emit_report(report, written[0]);
  emit_envelopes(sample_envelopes(config.envelope_n, config.envelope_m, config.envelope_count, config.alpha,
                                  config.mc_budget, config.seed),
                 written[1]);
  if (args.emit_data) export_synthetic(config, args.out, written);

  std::vector<std::string> m_values;
  for (std::size_t m : config.m_values) m_values.push_back(std::to_string(m));
  RunManifest manifest;
  manifest.command = "simulate";
  manifest.seed = config.seed;
  manifest.timestamp = utc_timestamp();
  manifest.parameters = {{"K", std::to_string(config.num_classes)},
                         {"d", std::to_string(config.dim)},
                         {"sigma2", format_double(config.sigma2)},
                         {"n_calib", std::to_string(config.n_calib)},
                         {"n_test", std::to_string(config.n_test_multiinputs)},
                         {"R", std::to_string(config.repetitions)},
                         {"m_values", join(m_values)},
                         {"alpha", format_double(config.alpha)},
                         {"methods", join(config.methods)},
                         {"rho", format_double(config.rho)},
                         {"seed", std::to_string(config.seed)},
                         {"T", std::to_string(config.mc_budget)},
                         {"block_size", std::to_string(config.block_size)},
                         {"envelope_n", std::to_string(config.envelope_n)},
                         {"envelope_m", std::to_string(config.envelope_m)},
                         {"envelope_count", std::to_string(config.envelope_count)},
                         {"min_class_count", std::to_string(report.min_class_count)}};
  manifest.input_digests = {{args.config.string(), sha256_file(args.config)}};
  for (const auto& p : written) manifest.output_digests[p.lexically_relative(args.out).string()] = sha256_file(p);
  emit_manifest(manifest, args.out / "manifest.json");
}

// --- evaluate -----------------------------------------------------------------

struct EvaluateArgs {
  fs::path calibration;
  fs::path tests;
  double alpha = 0.1;
  std::vector<std::string> methods;
  std::size_t budget = 9999;
  std::uint64_t seed = 0;
  fs::path out;
  std::optional<std::size_t> num_classes;
};

void run_evaluate(const EvaluateArgs& args) {
  std::vector<Method> methods;
  std::vector<ScoreFunctionSpec> specs;
  std::vector<std::size_t> slot;
  for (const auto& name : args.methods) {
    methods.push_back(Method::parse(name));
    slot.push_back(specs.size());
    if (methods.back().kind == MethodKind::PValueScore) specs.push_back(methods.back().spec);
  }
  if (methods.empty()) throw ConfigError("--methods must name at least one method");
  const bool needs_grouping = std::any_of(methods.begin(), methods.end(),
                                          [](const Method& m) { return m.kind == MethodKind::NaiveGrouped; });

  const auto parsed = parse_calibration(args.calibration, args.num_classes, args.seed, args.alpha);
  report_warnings(parsed.warnings);
  const std::size_t k = parsed.set.num_classes();
  const auto listing = read_test_listing(args.tests);
  if (listing.empty()) throw SchemaError(args.tests.string() + ": no test inputs listed");

  struct PerM {
    std::vector<CalibratedThresholds> thresholds;
    CalibrationSet grouped;
    std::vector<CoverageAccumulator> acc;
  };
  std::map<std::size_t, PerM> by_m;
  for (std::size_t i = 0; i < listing.size(); ++i) {
    if (listing[i].label >= k) {
      throw SchemaError(args.tests.string() + ": label " + std::to_string(listing[i].label) + " is not below K");
    }
    Rng obs_rng = derive_stream(args.seed, streams::kObservationUniforms, {i});
    const auto test = parse_multiinput(listing[i].path, k, obs_rng);
    const std::size_t m = test.m();
    auto it = by_m.find(m);
    if (it == by_m.end()) {
      PerM state;
      state.thresholds = calibrate_thresholds(specs, parsed.set, m, args.alpha, args.budget, args.seed);
      if (needs_grouping) {
        Rng group_rng = derive_stream(args.seed, streams::kGrouping, {m});
        state.grouped = group_calibration(parsed.set, m, group_rng);
      }
      state.acc.assign(methods.size(), CoverageAccumulator(k));
      it = by_m.emplace(m, std::move(state)).first;
    }
    auto& state = it->second;
    for (std::size_t j = 0; j < methods.size(); ++j) {
      const bool scored = methods[j].kind == MethodKind::PValueScore;
      const auto set = apply_method(methods[j], parsed.set, test, args.alpha,
                                    scored ? &state.thresholds[slot[j]] : nullptr, &state.grouped);
      state.acc[j].add(listing[i].label, set.contains(listing[i].label), set.size());
    }
  }

  EvaluationReport report;
  report.repetitions = listing.size();
  report.min_class_count = *std::min_element(parsed.counts.begin(), parsed.counts.end());
  for (std::size_t j = 0; j < methods.size(); ++j) {
    for (const auto& [m, state] : by_m) {
      const auto& acc = state.acc[j];
      report.rows.push_back({methods[j].name(), m, args.alpha, acc.coverage(), acc.coverage_se(),
                             acc.average_size(), acc.size_se(), acc.min_class_coverage()});
    }
  }
  emit_report(report, args.out);

  RunManifest manifest;
  manifest.command = "evaluate";
  manifest.seed = args.seed;
  manifest.timestamp = utc_timestamp();
  manifest.parameters = {{"alpha", format_double(args.alpha)},   {"methods", join(args.methods)},
                         {"T", std::to_string(args.budget)},       {"K", std::to_string(k)},
                         {"seed", std::to_string(args.seed)},      {"calibration", args.calibration.string()},
                         {"tests", args.tests.string()},           {"out", args.out.string()}};
  manifest.input_digests[args.calibration.string()] = sha256_file(args.calibration);
  manifest.input_digests[args.tests.string()] = sha256_file(args.tests);
  for (const auto& entry : listing) manifest.input_digests[entry.path.string()] = sha256_file(entry.path);
  manifest.output_digests = {{args.out.string(), sha256_file(args.out)}};
  emit_manifest(manifest, manifest_path(args.out));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class-conditional conformal prediction for multi-input classification"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  // dist
  auto* dist = app.add_subcommand("dist", "Beta-binomial / binomial laws and trajectory sampling");
  dist->require_subcommand(1);
  DistArgs bb;
  auto* betabin = dist->add_subcommand("betabin", "BetaBin(m, a, b) pmf, cdf or upper quantile");
  betabin->add_option("op", bb.op)->required()->check(CLI::IsMember({"pmf", "cdf", "quantile"}));
  betabin->add_option("--m", bb.m, "trials")->required();
  betabin->add_option("--a", bb.a)->required();
  betabin->add_option("--b", bb.b)->required();
  betabin->add_option("--k", bb.k);
  betabin->add_option("--alpha", bb.alpha);
  betabin->callback([&] { run_betabin(bb); });

  DistArgs bin;
  auto* binomial = dist->add_subcommand("binomial", "Binomial(m, p) pmf, cdf or upper quantile");
  binomial->add_option("op", bin.op)->required()->check(CLI::IsMember({"pmf", "cdf", "quantile"}));
  binomial->add_option("--m", bin.m, "trials")->required();
  binomial->add_option("--p", bin.p)->required();
  binomial->add_option("--k", bin.k);
  binomial->add_option("--alpha", bin.alpha);
  binomial->callback([&] { run_binomial(bin); });

  TrajArgs traj;
  auto* sample = dist->add_subcommand("sample-traj", "Uniform draws from A(n, m), one per line as numerators");
  sample->add_option("--n", traj.n)->required();
  sample->add_option("--m", traj.m)->required();
  sample->add_option("--count", traj.count)->required();
  sample->add_option("--seed", traj.seed)->required();
  sample->callback([&] { run_sample_traj(traj); });

  // predict
  PredictArgs pred;
  auto* predict = app.add_subcommand("predict", "Prediction set for one multi-input");
  predict->add_option("--calibration", pred.calibration)->required()->check(CLI::ExistingFile);
  predict->add_option("--test", pred.test)->required()->check(CLI::ExistingFile);
  predict->add_option("--alpha", pred.alpha)->required();
  predict->add_option("--method", pred.method)
      ->required()
      ->check(CLI::IsMember({"maj", "exch-maj", "betabin", "binomial", "quantile", "area", "lq", "bonferroni",
                             "simes", "naive-direct", "naive-grouped"}));
  predict->add_option("--q", pred.q, "norm exponent for area/lq (number or inf)");
  predict->add_option("--T", pred.budget, "Monte Carlo budget")->capture_default_str();
  predict->add_option("--K", pred.num_classes, "number of classes (default: 1 + largest label)");
  predict->add_option("--seed", pred.seed)->required();
  predict->add_option("--out", pred.out)->required();
  predict->callback([&] { run_predict(pred); });

  // simulate
  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Synthetic coverage/size benchmark");
  simulate->add_option("--config", sim.config)->required()->check(CLI::ExistingFile);
  simulate->add_option("--out", sim.out)->required();
  simulate->add_option("--seed", sim.seed, "overrides the config seed");
  simulate->add_flag("--emit-data", sim.emit_data, "also write a calibration file and test multi-inputs");
  simulate->callback([&] { run_simulate(sim); });

  // evaluate
  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Coverage/size report over labeled multi-input files");
  evaluate->add_option("--calibration", ev.calibration)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--tests", ev.tests, "CSV listing with header path,label")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--alpha", ev.alpha)->required();
  evaluate->add_option("--methods", ev.methods)->required()->delimiter(',');
  evaluate->add_option("--T", ev.budget, "Monte Carlo budget")->capture_default_str();
  evaluate->add_option("--K", ev.num_classes, "number of classes (default: 1 + largest label)");
  evaluate->add_option("--seed", ev.seed)->required();
  evaluate->add_option("--out", ev.out)->required();
  evaluate->callback([&] { run_evaluate(ev); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitSchema;
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << '\n';
    return kExitSchema;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitSchema;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitSchema;
  } catch (const DomainError& e) {
    std::cerr << "domain error: " << e.what() << '\n';
    return kExitDomain;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
