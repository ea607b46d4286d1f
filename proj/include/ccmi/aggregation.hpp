#pragma once

// Multi-input set constructors. Vote rules count how many single-observation
// class-conditional sets contain a label; score rules map the sorted p-value
// trajectory of each label to a real number and compare it with a threshold
// simulated from the uniform law on A(n_y, m).

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ccmi/conformal.hpp"
#include "ccmi/discrete_dist.hpp"
#include "ccmi/prediction_set.hpp"

namespace ccmi {

enum class ScoreKind { Quantile, Area, LqDistance, Bonferroni, Simes };

/// Which function of the sorted p-values a score rule uses. `q` is the norm
/// exponent for Area and LqDistance and may be +infinity (max-norm).
struct ScoreFunctionSpec {
  ScoreKind kind = ScoreKind::Quantile;
  double q = 1.0;

  static ScoreFunctionSpec quantile() { return {ScoreKind::Quantile, 1.0}; }
  static ScoreFunctionSpec area(double q) { return {ScoreKind::Area, q}; }
  static ScoreFunctionSpec lq_distance(double q) { return {ScoreKind::LqDistance, q}; }
  static ScoreFunctionSpec bonferroni() { return {ScoreKind::Bonferroni, 1.0}; }
  static ScoreFunctionSpec simes() { return {ScoreKind::Simes, 1.0}; }

  /// "quantile", "area:1", "lq:2", "lq:inf", "bonferroni", "simes".
  std::string name() const;
  /// Inverse of name(); bare "area" means q = 1 and bare "lq" means q = 2.
  static ScoreFunctionSpec parse(std::string_view text);

  friend bool operator==(const ScoreFunctionSpec&, const ScoreFunctionSpec&) = default;
};

/// A score function bound to one grid A(n, m). The quantile score needs the
/// cdfs of BetaBin(n, j, m - j + 1) for every j; they are tabulated once here.
class ScoreEvaluator {
 public:
  ScoreEvaluator(const ScoreFunctionSpec& spec, std::size_t n, std::size_t m);

  const ScoreFunctionSpec& spec() const noexcept { return spec_; }
  std::size_t n() const noexcept { return n_; }
  std::size_t m() const noexcept { return m_; }

  /// Score of a sorted trajectory given by its numerators over n.
  double operator()(std::span<const std::size_t> numerators) const;

 private:
  ScoreFunctionSpec spec_;
  std::size_t n_;
  std::size_t m_;
  std::vector<double> cdf_;  // row j-1 holds cdf of BetaBin(n, j, m-j+1) on 0..n
};

/// Throws DomainError if the trajectory is not a point of A(n_y, m).
double evaluate_score(const ScoreFunctionSpec& spec, const SortedPValueVector& traj, std::size_t n_y,
                      std::size_t m);

/// floor((T + 1) * alpha), the 1-based rank of the simulated threshold.
std::size_t monte_carlo_rank(std::size_t budget, double alpha);
/// Smallest T with monte_carlo_rank(T, alpha) >= 1.
std::size_t minimal_budget(double alpha);

/// Per-class thresholds V^y_(floor((T+1) alpha)) for one score spec, frozen at
/// calibration time. Classes with equal n_y share one simulated sample.
class CalibratedThresholds {
 public:
  struct Entry {
    double threshold;
    ScoreEvaluator evaluator;
  };

  CalibratedThresholds(ScoreFunctionSpec spec, double alpha, std::size_t budget, std::size_t m,
                       std::uint64_t seed, std::vector<std::size_t> class_counts,
                       std::map<std::size_t, Entry> by_count);

  const ScoreFunctionSpec& spec() const noexcept { return spec_; }
  double alpha() const noexcept { return alpha_; }
  std::size_t budget() const noexcept { return budget_; }
  std::size_t m() const noexcept { return m_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t num_classes() const noexcept { return class_counts_.size(); }
  std::size_t class_count(std::size_t y) const { return class_counts_.at(y); }

  /// Threshold and evaluator for class y; undefined (throws) for empty classes.
  double threshold(std::size_t y) const;
  const ScoreEvaluator& evaluator(std::size_t y) const;
  const std::map<std::size_t, Entry>& by_count() const noexcept { return by_count_; }

 private:
  const Entry& entry(std::size_t y) const;

  ScoreFunctionSpec spec_;
  double alpha_;
  std::size_t budget_;
  std::size_t m_;
  std::uint64_t seed_;
  std::vector<std::size_t> class_counts_;
  std::map<std::size_t, Entry> by_count_;
};

/// Simulated scores of `budget` uniform draws from A(n, m), ascending. The
/// draws come from the sub-stream (seed, "mc-calibration", n, m), so every
/// spec sees the same trajectories.
std::vector<double> simulate_scores(const ScoreEvaluator& evaluator, std::size_t budget,
                                    std::uint64_t seed);

/// Throws ConfigError naming the minimal budget when floor((T+1) alpha) < 1.
CalibratedThresholds calibrate_thresholds(const ScoreFunctionSpec& spec, const CalibrationSet& cals,
                                          std::size_t m, double alpha, std::size_t budget,
                                          std::uint64_t seed);

/// Several specs at once, scoring one shared simulated sample per n_y. Each
/// result equals what the single-spec overload returns.
std::vector<CalibratedThresholds> calibrate_thresholds(std::span<const ScoreFunctionSpec> specs,
                                                       const CalibrationSet& cals, std::size_t m,
                                                       double alpha, std::size_t budget,
                                                       std::uint64_t seed);

/// {y : v(sorted randomized p-values of y) >= threshold_y}. Throws ConfigError
/// if the thresholds were calibrated for another m or class layout.
PredictionSet pvalue_score_set(const CalibrationSet& cals, const MultiInputScores& test,
                               const CalibratedThresholds& thresholds);

/// Per class, the number of observations whose level-alpha class-conditional
/// set contains it.
std::vector<std::size_t> vote_counts(const CalibrationSet& cals, const MultiInputScores& test,
                                     double alpha);

/// Labels in at least half of the level-alpha/2 class-conditional sets.
PredictionSet majority_vote_set(const CalibrationSet& cals, const MultiInputScores& test, double alpha);

/// Labels holding a level-alpha/2 majority in every prefix of the observations.
PredictionSet exchangeable_majority_set(const CalibrationSet& cals, const MultiInputScores& test,
                                        double alpha);

/// Vote threshold for a class with n_y calibration points: the upper
/// alpha-quantile of BetaBin(m, n_y + 1 - floor((n_y+1) alpha), floor((n_y+1) alpha)).
std::int64_t betabin_vote_threshold(std::size_t n_y, std::size_t m, double alpha);

PredictionSet betabin_vote_set(const CalibrationSet& cals, const MultiInputScores& test, double alpha);

/// Vote rule with the class-independent threshold of Binomial(m, 1 - alpha).
PredictionSet binomial_vote_set(const CalibrationSet& cals, const MultiInputScores& test, double alpha);

}  // namespace ccmi
