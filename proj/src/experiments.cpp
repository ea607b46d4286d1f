#include "ccmi/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <thread>

#include "ccmi/errors.hpp"

namespace ccmi {

// ---------------------------------------------------------------------------
// SyntheticConfig

std::vector<double> SyntheticConfig::class_weights() const {
  std::vector<double> w(num_classes);
  const double k = static_cast<double>(num_classes);
  for (std::size_t y = 0; y < num_classes; ++y) w[y] = 1.0 / (1.0 + 3.0 * static_cast<double>(y) / k);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= total;
  return w;
}

void SyntheticConfig::validate() const {
  if (num_classes < 2) throw ConfigError("K must be at least 2");
  if (dim == 0) throw ConfigError("d must be positive");
  if (!(sigma2 > 0.0)) throw ConfigError("sigma2 must be positive");
  if (n_calib == 0) throw ConfigError("n_calib must be positive");
  if (repetitions == 0) throw ConfigError("R must be positive");
  if (block_size == 0) throw ConfigError("block_size must be positive");
  if (m_values.empty()) throw ConfigError("m_values must not be empty");
  for (std::size_t m : m_values) {
    if (m == 0) throw ConfigError("every m must be positive");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("rho must lie in [0, 1]");
  if (methods.empty()) throw ConfigError("methods must not be empty");
  if (monte_carlo_rank(mc_budget, alpha) < 1) {
    throw ConfigError("T=" + std::to_string(mc_budget) + " too small; need T >= " +
                      std::to_string(minimal_budget(alpha)));
  }
}

// ---------------------------------------------------------------------------
// SyntheticModel

SyntheticModel::SyntheticModel(const SyntheticConfig& config, Rng& rng)
    : dim_(config.dim), sigma2_(config.sigma2), weights_(config.class_weights()) {
  config.validate();
  centers_.resize(weights_.size() * dim_);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& c : centers_) c = normal(rng);
}

SyntheticModel SyntheticModel::from_config(const SyntheticConfig& config) {
  Rng rng = derive_stream(config.seed, streams::kSyntheticCenters);
  return SyntheticModel(config, rng);
}

std::size_t SyntheticModel::draw_label(Rng& rng) const {
  const double u = uniform01(rng);
  double cumulative = 0.0;
  for (std::size_t y = 0; y + 1 < weights_.size(); ++y) {
    cumulative += weights_[y];
    if (u < cumulative) return y;
  }
  return weights_.size() - 1;
}

std::vector<double> SyntheticModel::draw_point(std::size_t y, Rng& rng) const {
  std::normal_distribution<double> noise(0.0, std::sqrt(sigma2_));
  std::vector<double> x(dim_);
  for (std::size_t i = 0; i < dim_; ++i) x[i] = centers_[y * dim_ + i] + noise(rng);
  return x;
}

std::vector<double> SyntheticModel::posterior(std::span<const double> x) const {
  const std::size_t k = weights_.size();
  std::vector<double> logits(k);
  for (std::size_t y = 0; y < k; ++y) {
    double dist2 = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) {
      const double diff = x[i] - centers_[y * dim_ + i];
      dist2 += diff * diff;
    }
    logits[y] = std::log(weights_[y]) - dist2 / (2.0 * sigma2_);
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double& l : logits) {
    l = std::exp(l - top);
    total += l;
  }
  for (double& l : logits) l /= total;
  return logits;
}

std::vector<double> SyntheticModel::scores(std::span<const double> x) const {
  auto s = posterior(x);
  for (double& v : s) v = 1.0 - v;
  return s;
}

CalibrationRows SyntheticModel::draw_calibration(std::size_t n, Rng& rng) const {
  CalibrationRows rows;
  rows.labels.reserve(n);
  rows.scores.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = draw_label(rng);
    const auto x = draw_point(y, rng);
    rows.labels.push_back(y);
    rows.scores.push_back(1.0 - posterior(x)[y]);
  }
  return rows;
}

std::vector<std::vector<double>> SyntheticModel::draw_multiinput_points(std::size_t y, std::size_t m,
                                                                        double rho, Rng& rng) const {
  if (!(rho >= 0.0 && rho <= 1.0)) throw DomainError("rho must lie in [0, 1]");
  std::normal_distribution<double> noise(0.0, std::sqrt(sigma2_));
  std::vector<double> shared(dim_, 0.0);
  if (rho > 0.0) {
    for (double& z : shared) z = noise(rng);
  }
  const double shared_scale = std::sqrt(rho);
  const double own_scale = std::sqrt(1.0 - rho);
  std::vector<std::vector<double>> points(m, std::vector<double>(dim_));
  for (auto& x : points) {
    for (std::size_t i = 0; i < dim_; ++i) {
      x[i] = centers_[y * dim_ + i] + shared_scale * shared[i] + own_scale * noise(rng);
    }
  }
  return points;
}

MultiInputPayload SyntheticModel::draw_multiinput(std::size_t y, std::size_t m, double rho, Rng& rng) const {
  MultiInputPayload payload{y, m, num_classes(), {}};
  payload.scores.reserve(m * num_classes());
  for (const auto& x : draw_multiinput_points(y, m, rho, rng)) {
    const auto s = scores(x);
    payload.scores.insert(payload.scores.end(), s.begin(), s.end());
  }
  return payload;
}

SyntheticPayload generate_synthetic(const SyntheticConfig& config, Rng& rng) {
  const SyntheticModel model(config, rng);
  SyntheticPayload payload;
  payload.calibration = model.draw_calibration(config.n_calib, rng);
  for (std::size_t m : config.m_values) {
    for (std::size_t i = 0; i < config.n_test_multiinputs; ++i) {
      const std::size_t y = model.draw_label(rng);
      payload.tests.push_back(model.draw_multiinput(y, m, 0.0, rng));
    }
  }
  return payload;
}

std::vector<MultiInputPayload> correlated_multiinput_stress(const SyntheticModel& model, std::size_t m,
                                                            std::size_t count, double rho, Rng& rng) {
  std::vector<MultiInputPayload> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t y = model.draw_label(rng);
    out.push_back(model.draw_multiinput(y, m, rho, rng));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Naive baselines

namespace {

double mean_score(const MultiInputScores& test, std::size_t y) {
  double total = 0.0;
  for (std::size_t j = 0; j < test.m(); ++j) total += test.score(j, y);
  return total / static_cast<double>(test.m());
}

PredictionSet mean_score_set(const CalibrationSet& cals, const MultiInputScores& test, double alpha) {
  if (test.num_classes() != cals.num_classes()) throw DomainError("class count mismatch");
  PredictionSet set;
  set.diagnostics.resize(cals.num_classes());
  for (std::size_t y = 0; y < cals.num_classes(); ++y) {
    const auto& cal = cals[y];
    const double aggregated = mean_score(test, y);
    set.diagnostics[y] = aggregated;
    if (cal.empty()) {
      set.warnings.push_back({y, WarningKind::EmptyClass});
    } else if (rejection_rank(cal.size(), alpha) == 0) {
      set.warnings.push_back({y, WarningKind::UndersizedClass});
    }
    if (in_class_conditional_set(cal, aggregated, alpha)) set.members.push_back(y);
  }
  return set;
}

}  // namespace

PredictionSet naive_direct_baseline(const CalibrationSet& cals, const MultiInputScores& test, double alpha) {
  return mean_score_set(cals, test, alpha);
}

CalibrationSet group_calibration(const CalibrationSet& cals, std::size_t m, Rng& rng) {
  if (m == 0) throw DomainError("group size must be positive");
  std::vector<ClassCalibration> grouped;
  grouped.reserve(cals.num_classes());
  for (const auto& cal : cals.classes()) {
    std::vector<double> scores(cal.scores().begin(), cal.scores().end());
    std::shuffle(scores.begin(), scores.end(), rng);
    const std::size_t groups = scores.size() / m;
    std::vector<double> means(groups);
    for (std::size_t g = 0; g < groups; ++g) {
      means[g] = std::accumulate(scores.begin() + static_cast<std::ptrdiff_t>(g * m),
                                 scores.begin() + static_cast<std::ptrdiff_t>((g + 1) * m), 0.0) /
                 static_cast<double>(m);
    }
    grouped.push_back(ClassCalibration::with_drawn_uniforms(cal.label(), std::move(means), rng));
  }
  return CalibrationSet(std::move(grouped));
}

PredictionSet naive_grouped_calibration_baseline(const CalibrationSet& grouped, const MultiInputScores& test,
                                                 double alpha) {
  return mean_score_set(grouped, test, alpha);
}

PredictionSet naive_grouped_calibration_baseline(const CalibrationSet& cals, const MultiInputScores& test,
                                                 double alpha, std::size_t m, Rng& rng) {
  return mean_score_set(group_calibration(cals, m, rng), test, alpha);
}

// ---------------------------------------------------------------------------
// Methods

std::string Method::name() const {
  switch (kind) {
    case MethodKind::Majority:
      return "maj";
    case MethodKind::ExchangeableMajority:
      return "exch-maj";
    case MethodKind::BetaBinomialVote:
      return "betabin";
    case MethodKind::BinomialVote:
      return "binomial";
    case MethodKind::PValueScore:
      return spec.name();
    case MethodKind::NaiveDirect:
      return "naive-direct";
    case MethodKind::NaiveGrouped:
      return "naive-grouped";
  }
  return "unknown";
}

Method Method::parse(std::string_view text) {
  if (text == "maj") return {MethodKind::Majority, {}};
  if (text == "exch-maj") return {MethodKind::ExchangeableMajority, {}};
  if (text == "betabin") return {MethodKind::BetaBinomialVote, {}};
  if (text == "binomial") return {MethodKind::BinomialVote, {}};
  if (text == "naive-direct") return {MethodKind::NaiveDirect, {}};
  if (text == "naive-grouped") return {MethodKind::NaiveGrouped, {}};
  return {MethodKind::PValueScore, ScoreFunctionSpec::parse(text)};
}

// ---------------------------------------------------------------------------
// CoverageAccumulator

CoverageAccumulator::CoverageAccumulator(std::size_t num_classes)
    : class_trials_(num_classes, 0), class_hits_(num_classes, 0) {}

void CoverageAccumulator::add(std::size_t true_label, bool covered, std::size_t set_size) {
  if (true_label >= class_trials_.size()) {
    class_trials_.resize(true_label + 1, 0);
    class_hits_.resize(true_label + 1, 0);
  }
  ++count_;
  hits_ += covered ? 1 : 0;
  const auto s = static_cast<double>(set_size);
  size_sum_ += s;
  size_sq_sum_ += s * s;
  ++class_trials_[true_label];
  class_hits_[true_label] += covered ? 1 : 0;
}

void CoverageAccumulator::merge(const CoverageAccumulator& other) {
  count_ += other.count_;
  hits_ += other.hits_;
  size_sum_ += other.size_sum_;
  size_sq_sum_ += other.size_sq_sum_;
  const std::size_t k = std::max(class_trials_.size(), other.class_trials_.size());
  class_trials_.resize(k, 0);
  class_hits_.resize(k, 0);
  for (std::size_t y = 0; y < other.class_trials_.size(); ++y) {
    class_trials_[y] += other.class_trials_[y];
    class_hits_[y] += other.class_hits_[y];
  }
}

namespace {

// Sample standard deviation divided by sqrt(count).
double standard_error(double sum, double sq_sum, std::size_t count) {
  if (count < 2) return 0.0;
  const double n = static_cast<double>(count);
  const double mean = sum / n;
  const double var = std::max(0.0, (sq_sum - n * mean * mean) / (n - 1.0));
  return std::sqrt(var) / std::sqrt(n);
}

}  // namespace

double CoverageAccumulator::coverage() const noexcept {
  return count_ == 0 ? 0.0 : static_cast<double>(hits_) / static_cast<double>(count_);
}

double CoverageAccumulator::coverage_se() const noexcept {
  const auto h = static_cast<double>(hits_);
  return standard_error(h, h, count_);
}

double CoverageAccumulator::average_size() const noexcept {
  return count_ == 0 ? 0.0 : size_sum_ / static_cast<double>(count_);
}

double CoverageAccumulator::size_se() const noexcept { return standard_error(size_sum_, size_sq_sum_, count_); }

double CoverageAccumulator::min_class_coverage() const noexcept {
  double worst = 1.0;
  for (std::size_t y = 0; y < class_trials_.size(); ++y) {
    if (class_trials_[y] == 0) continue;
    worst = std::min(worst, static_cast<double>(class_hits_[y]) / static_cast<double>(class_trials_[y]));
  }
  return worst;
}

const ReportRow& EvaluationReport::row(std::string_view method, std::size_t m, double alpha) const {
  for (const auto& r : rows) {
    if (r.method == method && r.m == m && r.alpha == alpha) return r;
  }
  throw std::out_of_range("no report row for method " + std::string(method) + " at m=" + std::to_string(m));
}

PredictionSet apply_method(const Method& method, const CalibrationSet& cals, const MultiInputScores& test,
                           double alpha, const CalibratedThresholds* thresholds, const CalibrationSet* grouped) {
  switch (method.kind) {
    case MethodKind::Majority:
      return majority_vote_set(cals, test, alpha);
    case MethodKind::ExchangeableMajority:
      return exchangeable_majority_set(cals, test, alpha);
    case MethodKind::BetaBinomialVote:
      return betabin_vote_set(cals, test, alpha);
    case MethodKind::BinomialVote:
      return binomial_vote_set(cals, test, alpha);
    case MethodKind::PValueScore:
      if (thresholds == nullptr) throw ConfigError(method.name() + " needs calibrated thresholds");
      return pvalue_score_set(cals, test, *thresholds);
    case MethodKind::NaiveDirect:
      return naive_direct_baseline(cals, test, alpha);
    case MethodKind::NaiveGrouped:
      if (grouped == nullptr) throw ConfigError("naive-grouped needs a grouped calibration");
      return naive_grouped_calibration_baseline(*grouped, test, alpha);
  }
  throw ConfigError("unknown method");
}

// ---------------------------------------------------------------------------
// Benchmark

namespace {

struct CellResult {
  std::vector<CoverageAccumulator> per_method;
  std::size_t min_class_count = std::numeric_limits<std::size_t>::max();
};

CellResult run_cell(const SyntheticConfig& config, const SyntheticModel& model, std::span<const Method> methods,
                    std::size_t m, double alpha) {
  const std::size_t k = model.num_classes();
  CellResult result;
  result.per_method.assign(methods.size(), CoverageAccumulator(k));

  std::vector<ScoreFunctionSpec> specs;
  std::vector<std::size_t> spec_slot(methods.size(), 0);
  bool needs_grouping = false;
  for (std::size_t i = 0; i < methods.size(); ++i) {
    if (methods[i].kind == MethodKind::PValueScore) {
      spec_slot[i] = specs.size();
      specs.push_back(methods[i].spec);
    }
    needs_grouping = needs_grouping || methods[i].kind == MethodKind::NaiveGrouped;
  }

  const std::size_t blocks = (config.repetitions + config.block_size - 1) / config.block_size;
  for (std::size_t b = 0; b < blocks; ++b) {
    Rng cal_rng = derive_stream(config.seed, streams::kSyntheticCalibration, {b});
    const auto rows = model.draw_calibration(config.n_calib, cal_rng);
    Rng uniform_rng = derive_stream(config.seed, streams::kCalibrationUniforms, {b});
    const auto cals = CalibrationSet::from_rows(rows.labels, rows.scores, k, uniform_rng);
    for (std::size_t c : cals.class_counts()) result.min_class_count = std::min(result.min_class_count, c);

    const auto thresholds = calibrate_thresholds(specs, cals, m, alpha, config.mc_budget, config.seed);
    CalibrationSet grouped;
    if (needs_grouping) {
      Rng group_rng = derive_stream(config.seed, streams::kGrouping, {b, m});
      grouped = group_calibration(cals, m, group_rng);
    }

    const std::size_t first = b * config.block_size;
    const std::size_t last = std::min(config.repetitions, first + config.block_size);
    for (std::size_t rep = first; rep < last; ++rep) {
      Rng test_rng = derive_stream(config.seed, streams::kSyntheticTest, {m, rep});
      const std::size_t y = model.draw_label(test_rng);
      auto payload = model.draw_multiinput(y, m, config.rho, test_rng);
      Rng obs_rng = derive_stream(config.seed, streams::kObservationUniforms, {m, rep});
      const auto test = MultiInputScores::with_drawn_uniforms(m, k, std::move(payload.scores), obs_rng);

      for (std::size_t i = 0; i < methods.size(); ++i) {
        const auto set = apply_method(methods[i], cals, test, alpha,
                                      methods[i].kind == MethodKind::PValueScore ? &thresholds[spec_slot[i]] : nullptr,
                                      needs_grouping ? &grouped : nullptr);
        result.per_method[i].add(y, set.contains(y), set.size());
      }
    }
  }
  return result;
}

}  // namespace

EvaluationReport run_benchmark(const SyntheticConfig& config, std::span<const Method> methods,
                               std::span<const double> alphas) {
  config.validate();
  for (double a : alphas) {
    if (monte_carlo_rank(config.mc_budget, a) < 1) {
      throw ConfigError("T=" + std::to_string(config.mc_budget) + " too small for alpha; need T >= " +
                        std::to_string(minimal_budget(a)));
    }
  }
  const SyntheticModel model = SyntheticModel::from_config(config);

  struct Cell {
    double alpha;
    std::size_t m;
  };
  std::vector<Cell> cells;
  for (double a : alphas) {
    for (std::size_t m : config.m_values) cells.push_back({a, m});
  }

  // Cells draw from their own seed-derived streams; scheduling cannot change results.
  std::vector<CellResult> results(cells.size());
  const unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  if (workers > 1 && cells.size() > 1) {
    std::vector<std::future<CellResult>> pending;
    for (const auto& cell : cells) {
      pending.push_back(std::async(std::launch::async, [&, cell] {
        return run_cell(config, model, methods, cell.m, cell.alpha);
      }));
    }
    for (std::size_t i = 0; i < cells.size(); ++i) results[i] = pending[i].get();
  } else {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      results[i] = run_cell(config, model, methods, cells[i].m, cells[i].alpha);
    }
  }

  EvaluationReport report;
  report.repetitions = config.repetitions;
  report.min_class_count = std::numeric_limits<std::size_t>::max();
  for (std::size_t c = 0; c < cells.size(); ++c) {
    report.min_class_count = std::min(report.min_class_count, results[c].min_class_count);
    for (std::size_t i = 0; i < methods.size(); ++i) {
      const auto& acc = results[c].per_method[i];
      report.rows.push_back({methods[i].name(), cells[c].m, cells[c].alpha, acc.coverage(), acc.coverage_se(),
                             acc.average_size(), acc.size_se(), acc.min_class_coverage()});
    }
  }
  return report;
}

EvaluationReport run_benchmark(const SyntheticConfig& config) {
  std::vector<Method> methods;
  for (const auto& name : config.methods) methods.push_back(Method::parse(name));
  const double alphas[] = {config.alpha};
  return run_benchmark(config, methods, alphas);
}

// ---------------------------------------------------------------------------
// Envelopes

EnvelopeSample sample_envelopes(std::size_t n, std::size_t m, std::size_t count, double alpha,
                                std::size_t budget, std::uint64_t seed) {
  const TrajectoryGrid grid(n, m);
  EnvelopeSample out;
  out.n = n;
  out.m = m;
  Rng rng = derive_stream(seed, streams::kTrajectorySample, {n, m});
  out.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.samples.push_back(sample_trajectory(grid, rng));

  const std::size_t rank = monte_carlo_rank(budget, alpha);
  if (rank < 1) throw ConfigError("T too small; need T >= " + std::to_string(minimal_budget(alpha)));
  const ScoreEvaluator quantile(ScoreFunctionSpec::quantile(), n, m);
  const double level = simulate_scores(quantile, budget, seed)[rank - 1];
  out.quantile_envelope.resize(m);
  for (std::size_t j = 1; j <= m; ++j) {
    const auto cdf = BetaBinomialDist(static_cast<std::int64_t>(n), static_cast<std::int64_t>(j),
                                      static_cast<std::int64_t>(m - j + 1))
                         .cdf_table();
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), level);
    out.quantile_envelope[j - 1] = static_cast<std::size_t>(it - cdf.begin());
  }

  // At least ceil(m/2) of the sorted values must reach the alpha/2 cutoff.
  const std::size_t cutoff = rejection_rank(n, alpha / 2.0);
  const std::size_t needed = (m + 1) / 2;
  out.majority_envelope.assign(m, 0);
  for (std::size_t j = m - needed; j < m; ++j) out.majority_envelope[j] = cutoff;
  return out;
}

}  // namespace ccmi
