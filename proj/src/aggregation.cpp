#include "ccmi/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "ccmi/errors.hpp"
#include "ccmi/seeding.hpp"

namespace ccmi {

// ---------------------------------------------------------------------------
// ScoreFunctionSpec

namespace {

std::string format_q(double q) {
  if (std::isinf(q)) return "inf";
  std::ostringstream os;
  os << q;
  return os.str();
}

double parse_q(std::string_view text) {
  const std::string s(text);
  if (s == "inf" || s == "Inf" || s == "infinity") return std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double q = 0.0;
  try {
    q = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ConfigError("invalid norm exponent '" + s + "'");
  }
  if (used != s.size() || !(q > 0.0)) throw ConfigError("invalid norm exponent '" + s + "'");
  return q;
}

}  // namespace

std::string ScoreFunctionSpec::name() const {
  switch (kind) {
    case ScoreKind::Quantile:
      return "quantile";
    case ScoreKind::Area:
      return "area:" + format_q(q);
    case ScoreKind::LqDistance:
      return "lq:" + format_q(q);
    case ScoreKind::Bonferroni:
      return "bonferroni";
    case ScoreKind::Simes:
      return "simes";
  }
  return "unknown";
}

ScoreFunctionSpec ScoreFunctionSpec::parse(std::string_view text) {
  const auto colon = text.find(':');
  const std::string_view head = text.substr(0, colon);
  const std::string_view tail = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
  if (head == "quantile" && tail.empty()) return quantile();
  if (head == "bonferroni" && tail.empty()) return bonferroni();
  if (head == "simes" && tail.empty()) return simes();
  if (head == "area") return area(tail.empty() ? 1.0 : parse_q(tail));
  if (head == "lq") return lq_distance(tail.empty() ? 2.0 : parse_q(tail));
  throw ConfigError("unknown score function '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// ScoreEvaluator

ScoreEvaluator::ScoreEvaluator(const ScoreFunctionSpec& spec, std::size_t n, std::size_t m)
    : spec_(spec), n_(n), m_(m) {
  if (n == 0 || m == 0) throw DomainError("score evaluator needs n >= 1 and m >= 1");
  if ((spec.kind == ScoreKind::Area || spec.kind == ScoreKind::LqDistance) && !(spec.q > 0.0)) {
    throw DomainError("norm exponent must be positive");
  }
  if (spec.kind == ScoreKind::Quantile) {
    cdf_.reserve(m * (n + 1));
    for (std::size_t j = 1; j <= m; ++j) {
      const BetaBinomialDist marginal(static_cast<std::int64_t>(n), static_cast<std::int64_t>(j),
                                      static_cast<std::int64_t>(m - j + 1));
      const auto table = marginal.cdf_table();
      cdf_.insert(cdf_.end(), table.begin(), table.end());
    }
  }
}

double ScoreEvaluator::operator()(std::span<const std::size_t> numerators) const {
  const double n = static_cast<double>(n_);
  const double m = static_cast<double>(m_);
  switch (spec_.kind) {
    case ScoreKind::Quantile: {
      double v = 1.0;
      for (std::size_t j = 0; j < m_; ++j) v = std::min(v, cdf_[j * (n_ + 1) + numerators[j]]);
      return v;
    }
    case ScoreKind::Area: {
      if (std::isinf(spec_.q)) return static_cast<double>(numerators[m_ - 1]) / n;
      double total = 0.0;
      for (std::size_t k : numerators) total += std::pow(static_cast<double>(k) / n, spec_.q);
      return std::pow(total, 1.0 / spec_.q);
    }
    case ScoreKind::LqDistance: {
      double total = 0.0;
      for (std::size_t j = 0; j < m_; ++j) {
        const double gap = std::abs(static_cast<double>(numerators[j]) / n - static_cast<double>(j + 1) / (m + 1.0));
        if (std::isinf(spec_.q)) {
          total = std::max(total, gap);
        } else {
          total += std::pow(gap, spec_.q);
        }
      }
      return std::isinf(spec_.q) ? -total : -std::pow(total, 1.0 / spec_.q);
    }
    case ScoreKind::Bonferroni:
      return static_cast<double>(numerators[0]) / n;
    case ScoreKind::Simes: {
      double v = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < m_; ++j) {
        v = std::min(v, m * static_cast<double>(numerators[j]) / (n * static_cast<double>(j + 1)));
      }
      return v;
    }
  }
  return 0.0;
}

double evaluate_score(const ScoreFunctionSpec& spec, const SortedPValueVector& traj, std::size_t n_y,
                      std::size_t m) {
  const auto& t = traj.trajectory;
  if (t.size() != m) {
    throw DomainError("trajectory has length " + std::to_string(t.size()) + ", expected m=" + std::to_string(m));
  }
  if (t.denominator != n_y || !t.on_grid()) throw DomainError("trajectory is not a point of A(n_y, m)");
  return ScoreEvaluator(spec, n_y, m)(t.numerators);
}

// ---------------------------------------------------------------------------
// Monte Carlo thresholds

std::size_t monte_carlo_rank(std::size_t budget, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must lie in (0, 1)");
  return floor_times(budget + 1, alpha);
}

std::size_t minimal_budget(double alpha) {
  std::size_t t = ceil_times(1, 1.0 / alpha);
  t = t > 0 ? t - 1 : 0;
  while (t > 0 && monte_carlo_rank(t - 1, alpha) >= 1) --t;
  while (monte_carlo_rank(t, alpha) < 1) ++t;
  return t;
}

CalibratedThresholds::CalibratedThresholds(ScoreFunctionSpec spec, double alpha, std::size_t budget,
                                           std::size_t m, std::uint64_t seed,
                                           std::vector<std::size_t> class_counts,
                                           std::map<std::size_t, Entry> by_count)
    : spec_(spec),
      alpha_(alpha),
      budget_(budget),
      m_(m),
      seed_(seed),
      class_counts_(std::move(class_counts)),
      by_count_(std::move(by_count)) {
  if (monte_carlo_rank(budget_, alpha_) < 1) {
    throw ConfigError("Monte Carlo budget T=" + std::to_string(budget_) + " too small at alpha; need T >= " +
                      std::to_string(minimal_budget(alpha_)));
  }
}

const CalibratedThresholds::Entry& CalibratedThresholds::entry(std::size_t y) const {
  const std::size_t n_y = class_counts_.at(y);
  auto it = by_count_.find(n_y);
  if (it == by_count_.end()) {
    throw DomainError("no threshold for class " + std::to_string(y) + " (n_y=" + std::to_string(n_y) + ")");
  }
  return it->second;
}

double CalibratedThresholds::threshold(std::size_t y) const { return entry(y).threshold; }

const ScoreEvaluator& CalibratedThresholds::evaluator(std::size_t y) const { return entry(y).evaluator; }

std::vector<double> simulate_scores(const ScoreEvaluator& evaluator, std::size_t budget,
                                    std::uint64_t seed) {
  const TrajectoryGrid grid(evaluator.n(), evaluator.m());
  Rng rng = derive_stream(seed, streams::kMonteCarlo, {grid.n, grid.m});
  std::vector<std::size_t> traj(grid.m);
  std::vector<double> scores(budget);
  for (double& v : scores) {
    sample_trajectory_into(grid, rng, traj);
    v = evaluator(traj);
  }
  std::sort(scores.begin(), scores.end());
  return scores;
}

namespace {

// Thresholds of every spec for one calibration count, from one shared sample.
std::vector<double> thresholds_for_count(std::span<const ScoreEvaluator> evaluators, std::size_t budget,
                                         std::size_t rank, std::uint64_t seed) {
  const TrajectoryGrid grid(evaluators.front().n(), evaluators.front().m());
  Rng rng = derive_stream(seed, streams::kMonteCarlo, {grid.n, grid.m});
  std::vector<std::size_t> traj(grid.m);
  std::vector<std::vector<double>> scores(evaluators.size(), std::vector<double>(budget));
  for (std::size_t t = 0; t < budget; ++t) {
    sample_trajectory_into(grid, rng, traj);
    for (std::size_t s = 0; s < evaluators.size(); ++s) scores[s][t] = evaluators[s](traj);
  }
  std::vector<double> out;
  out.reserve(evaluators.size());
  for (auto& sample : scores) {
    std::nth_element(sample.begin(), sample.begin() + static_cast<std::ptrdiff_t>(rank - 1), sample.end());
    out.push_back(sample[rank - 1]);
  }
  return out;
}

}  // namespace

std::vector<CalibratedThresholds> calibrate_thresholds(std::span<const ScoreFunctionSpec> specs,
                                                       const CalibrationSet& cals, std::size_t m,
                                                       double alpha, std::size_t budget,
                                                       std::uint64_t seed) {
  if (m == 0) throw DomainError("m must be >= 1");
  const std::size_t rank = monte_carlo_rank(budget, alpha);
  if (rank < 1) {
    throw ConfigError("Monte Carlo budget T=" + std::to_string(budget) + " gives floor((T+1)*alpha)=0; need T >= " +
                      std::to_string(minimal_budget(alpha)));
  }
  if (specs.empty()) return {};

  const auto counts = cals.class_counts();
  std::set<std::size_t> distinct;
  for (std::size_t c : counts) {
    if (c > 0) distinct.insert(c);
  }

  struct Job {
    std::size_t count;
    std::vector<ScoreEvaluator> evaluators;
    std::vector<double> thresholds;
  };
  std::vector<Job> jobs;
  for (std::size_t c : distinct) {
    Job job{c, {}, {}};
    for (const auto& spec : specs) job.evaluators.emplace_back(spec, c, m);
    jobs.push_back(std::move(job));
  }

  // Each job owns its seed-derived stream, so the result does not depend on
  // how jobs are scheduled.
  const unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  if (workers > 1 && jobs.size() > 1) {
    std::vector<std::future<std::vector<double>>> pending;
    for (auto& job : jobs) {
      pending.push_back(std::async(std::launch::async, [&job, budget, rank, seed] {
        return thresholds_for_count(job.evaluators, budget, rank, seed);
      }));
    }
    for (std::size_t i = 0; i < jobs.size(); ++i) jobs[i].thresholds = pending[i].get();
  } else {
    for (auto& job : jobs) job.thresholds = thresholds_for_count(job.evaluators, budget, rank, seed);
  }

  std::vector<CalibratedThresholds> out;
  out.reserve(specs.size());
  for (std::size_t s = 0; s < specs.size(); ++s) {
    std::map<std::size_t, CalibratedThresholds::Entry> by_count;
    for (const auto& job : jobs) {
      by_count.emplace(job.count, CalibratedThresholds::Entry{job.thresholds[s], job.evaluators[s]});
    }
    out.emplace_back(specs[s], alpha, budget, m, seed, counts, std::move(by_count));
  }
  return out;
}

CalibratedThresholds calibrate_thresholds(const ScoreFunctionSpec& spec, const CalibrationSet& cals,
                                          std::size_t m, double alpha, std::size_t budget,
                                          std::uint64_t seed) {
  auto all = calibrate_thresholds(std::span<const ScoreFunctionSpec>(&spec, 1), cals, m, alpha, budget, seed);
  return std::move(all.front());
}

PredictionSet pvalue_score_set(const CalibrationSet& cals, const MultiInputScores& test,
                               const CalibratedThresholds& thresholds) {
  if (thresholds.m() != test.m()) {
    throw ConfigError("thresholds calibrated for m=" + std::to_string(thresholds.m()) +
                      " but the multi-input has m=" + std::to_string(test.m()));
  }
  if (thresholds.num_classes() != cals.num_classes() || test.num_classes() != cals.num_classes()) {
    throw ConfigError("class count differs between calibration, test scores and thresholds");
  }
  PredictionSet set;
  set.diagnostics.resize(cals.num_classes());
  for (std::size_t y = 0; y < cals.num_classes(); ++y) {
    const auto& cal = cals[y];
    if (cal.empty()) {
      set.warnings.push_back({y, WarningKind::EmptyClass});
      set.diagnostics[y] = std::numeric_limits<double>::infinity();
      set.members.push_back(y);
      continue;
    }
    if (thresholds.class_count(y) != cal.size()) {
      throw ConfigError("thresholds were calibrated on a different calibration set");
    }
    const auto traj = pvalue_trajectory(cal, test, y);
    const double v = thresholds.evaluator(y)(traj.trajectory.numerators);
    set.diagnostics[y] = v;
    if (v >= thresholds.threshold(y)) set.members.push_back(y);
  }
  return set;
}

// ---------------------------------------------------------------------------
// Vote rules

namespace {

void require_same_classes(const CalibrationSet& cals, const MultiInputScores& test) {
  if (test.num_classes() != cals.num_classes()) {
    throw DomainError("multi-input has K=" + std::to_string(test.num_classes()) +
                      " score columns but calibration has K=" + std::to_string(cals.num_classes()));
  }
}

void flag_if_unrejectable(const ClassCalibration& cal, double alpha, PredictionSet& set) {
  if (cal.empty()) {
    set.warnings.push_back({cal.label(), WarningKind::EmptyClass});
  } else if (rejection_rank(cal.size(), alpha) == 0) {
    set.warnings.push_back({cal.label(), WarningKind::UndersizedClass});
  }
}

template <typename Keep>
PredictionSet vote_set(const CalibrationSet& cals, const MultiInputScores& test, double level, Keep&& keep) {
  require_same_classes(cals, test);
  PredictionSet set;
  set.diagnostics.resize(cals.num_classes());
  for (std::size_t y = 0; y < cals.num_classes(); ++y) {
    const auto& cal = cals[y];
    flag_if_unrejectable(cal, level, set);
    std::vector<bool> hits(test.m());
    std::size_t votes = 0;
    for (std::size_t j = 0; j < test.m(); ++j) {
      hits[j] = in_class_conditional_set(cal, test.score(j, y), level);
      votes += hits[j] ? 1 : 0;
    }
    set.diagnostics[y] = static_cast<double>(votes);
    if (keep(y, hits, votes)) set.members.push_back(y);
  }
  return set;
}

}  // namespace

std::vector<std::size_t> vote_counts(const CalibrationSet& cals, const MultiInputScores& test, double alpha) {
  require_same_classes(cals, test);
  std::vector<std::size_t> votes(cals.num_classes(), 0);
  for (std::size_t y = 0; y < cals.num_classes(); ++y) {
    for (std::size_t j = 0; j < test.m(); ++j) {
      if (in_class_conditional_set(cals[y], test.score(j, y), alpha)) ++votes[y];
    }
  }
  return votes;
}

PredictionSet majority_vote_set(const CalibrationSet& cals, const MultiInputScores& test, double alpha) {
  const std::size_t m = test.m();
  return vote_set(cals, test, alpha / 2.0,
                  [m](std::size_t, const std::vector<bool>&, std::size_t votes) { return 2 * votes >= m; });
}

PredictionSet exchangeable_majority_set(const CalibrationSet& cals, const MultiInputScores& test,
                                        double alpha) {
  return vote_set(cals, test, alpha / 2.0, [](std::size_t, const std::vector<bool>& hits, std::size_t) {
    std::size_t prefix_votes = 0;
    for (std::size_t k = 1; k <= hits.size(); ++k) {
      prefix_votes += hits[k - 1] ? 1 : 0;
      if (2 * prefix_votes < k) return false;
    }
    return true;
  });
}

std::int64_t betabin_vote_threshold(std::size_t n_y, std::size_t m, double alpha) {
  const std::size_t low = rejection_rank(n_y, alpha);
  const BetaBinomialDist votes(static_cast<std::int64_t>(m), static_cast<std::int64_t>(n_y + 1 - low),
                               static_cast<std::int64_t>(low));
  return votes.upper_quantile(alpha);
}

PredictionSet betabin_vote_set(const CalibrationSet& cals, const MultiInputScores& test, double alpha) {
  std::unordered_map<std::size_t, std::int64_t> by_count;
  const std::size_t m = test.m();
  return vote_set(cals, test, alpha, [&](std::size_t y, const std::vector<bool>&, std::size_t votes) {
    const std::size_t n_y = cals[y].size();
    auto it = by_count.find(n_y);
    if (it == by_count.end()) it = by_count.emplace(n_y, betabin_vote_threshold(n_y, m, alpha)).first;
    return static_cast<std::int64_t>(votes) >= it->second;
  });
}

PredictionSet binomial_vote_set(const CalibrationSet& cals, const MultiInputScores& test, double alpha) {
  const std::int64_t q = binomial_upper_quantile(static_cast<std::int64_t>(test.m()), 1.0 - alpha, alpha);
  return vote_set(cals, test, alpha, [q](std::size_t, const std::vector<bool>&, std::size_t votes) {
    return static_cast<std::int64_t>(votes) >= q;
  });
}

}  // namespace ccmi
