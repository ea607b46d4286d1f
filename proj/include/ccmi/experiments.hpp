#pragma once

// Desk-scale experiments: an imbalanced Gaussian-mixture benchmark scored by
// its exact Bayes posterior, the two naive aggregation baselines, a correlated
// multi-input generator that breaks exchangeability, and a coverage/size
// evaluation loop over all set constructors.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ccmi/aggregation.hpp"
#include "ccmi/conformal.hpp"
#include "ccmi/seeding.hpp"

namespace ccmi {

struct SyntheticConfig {
  std::size_t num_classes = 10;
  std::size_t dim = 6;
  double sigma2 = 3.0;
  std::size_t n_calib = 1000;
  std::size_t n_test_multiinputs = 100;  // per m, for generate_synthetic
  std::size_t repetitions = 2000;
  std::vector<std::size_t> m_values{1, 2, 5, 10, 20};
  double alpha = 0.1;
  std::vector<std::string> methods{"maj",    "exch-maj", "betabin", "binomial", "quantile", "area:1",
                                   "area:2", "lq:2",     "bonferroni", "simes", "naive-direct",
                                   "naive-grouped"};
  double rho = 0.0;
  std::uint64_t seed = 0;
  std::size_t mc_budget = 9999;
  std::size_t block_size = 100;  // repetitions sharing one calibration draw
  // Trajectory sample written alongside the report.
  std::size_t envelope_n = 100;
  std::size_t envelope_m = 10;
  std::size_t envelope_count = 150;

  /// p(y) proportional to 1 / (1 + 3y/K) for 0-based y, normalized.
  std::vector<double> class_weights() const;
  /// Throws ConfigError on empty or inconsistent settings.
  void validate() const;
};

/// Labeled calibration rows: scores are evaluated at the true label.
struct CalibrationRows {
  std::vector<std::size_t> labels;
  std::vector<double> scores;
};

/// One multi-input with its true label; scores are m x K row-major.
struct MultiInputPayload {
  std::size_t label = 0;
  std::size_t m = 0;
  std::size_t num_classes = 0;
  std::vector<double> scores;
};

/// The mixture Y ~ p(y), X | Y=y ~ N(mu_y, sigma2 I_d) together with its
/// Bayes classifier. Scores are 1 - P(Y = y | X = x).
class SyntheticModel {
 public:
  /// Draws the centers mu_y ~ N(0, I_d) from `rng`.
  SyntheticModel(const SyntheticConfig& config, Rng& rng);
  /// Centers from the run seed's "synthetic-centers" stream.
  static SyntheticModel from_config(const SyntheticConfig& config);

  std::size_t num_classes() const noexcept { return weights_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const double> weights() const noexcept { return weights_; }
  std::span<const double> center(std::size_t y) const { return {centers_.data() + y * dim_, dim_}; }

  std::size_t draw_label(Rng& rng) const;
  std::vector<double> draw_point(std::size_t y, Rng& rng) const;
  std::vector<double> posterior(std::span<const double> x) const;
  std::vector<double> scores(std::span<const double> x) const;

  CalibrationRows draw_calibration(std::size_t n, Rng& rng) const;

  /// m points of class y, X_j = mu_y + sqrt(rho) Z + sqrt(1 - rho) Z_j with
  /// Z, Z_j ~ N(0, sigma2 I_d); rho = 0 gives i.i.d. observations.
  std::vector<std::vector<double>> draw_multiinput_points(std::size_t y, std::size_t m, double rho,
                                                          Rng& rng) const;
  MultiInputPayload draw_multiinput(std::size_t y, std::size_t m, double rho, Rng& rng) const;

 private:
  std::size_t dim_;
  double sigma2_;
  std::vector<double> weights_;
  std::vector<double> centers_;  // K x d row-major
};

struct SyntheticPayload {
  CalibrationRows calibration;
  std::vector<MultiInputPayload> tests;  // n_test_multiinputs per value of m, in m order
};

/// Draws centers, a calibration sample of size n_calib and i.i.d. multi-inputs.
SyntheticPayload generate_synthetic(const SyntheticConfig& config, Rng& rng);

/// Correlated multi-inputs of size m (true label drawn from p(y)).
std::vector<MultiInputPayload> correlated_multiinput_stress(const SyntheticModel& model, std::size_t m,
                                                            std::size_t count, double rho, Rng& rng);

/// Mean test score checked against the ordinary class-conditional threshold.
PredictionSet naive_direct_baseline(const CalibrationSet& cals, const MultiInputScores& test, double alpha);

/// Calibration reduced to floor(n_y / m) group means per class. Groups are
/// formed after shuffling each class with `rng`, since stored scores are sorted.
CalibrationSet group_calibration(const CalibrationSet& cals, std::size_t m, Rng& rng);

/// Mean test score checked against a calibration already reduced by
/// group_calibration().
PredictionSet naive_grouped_calibration_baseline(const CalibrationSet& grouped, const MultiInputScores& test,
                                                 double alpha);
PredictionSet naive_grouped_calibration_baseline(const CalibrationSet& cals, const MultiInputScores& test,
                                                 double alpha, std::size_t m, Rng& rng);

enum class MethodKind {
  Majority,
  ExchangeableMajority,
  BetaBinomialVote,
  BinomialVote,
  PValueScore,
  NaiveDirect,
  NaiveGrouped,
};

/// A set constructor selectable by name.
struct Method {
  MethodKind kind = MethodKind::Majority;
  ScoreFunctionSpec spec{};  // PValueScore only

  std::string name() const;
  /// "maj", "exch-maj", "betabin", "binomial", "naive-direct", "naive-grouped",
  /// or any score name accepted by ScoreFunctionSpec::parse.
  static Method parse(std::string_view text);
};

/// Builds the set for one method. `thresholds` is required for p-value scores
/// and `grouped` (from group_calibration) for naive-grouped.
PredictionSet apply_method(const Method& method, const CalibrationSet& cals, const MultiInputScores& test,
                           double alpha, const CalibratedThresholds* thresholds = nullptr,
                           const CalibrationSet* grouped = nullptr);

/// Coverage and size tallies for one (method, m, alpha) cell.
class CoverageAccumulator {
 public:
  explicit CoverageAccumulator(std::size_t num_classes = 0);

  void add(std::size_t true_label, bool covered, std::size_t set_size);
  void merge(const CoverageAccumulator& other);

  std::size_t count() const noexcept { return count_; }
  double coverage() const noexcept;
  double coverage_se() const noexcept;
  double average_size() const noexcept;
  double size_se() const noexcept;
  /// Minimum over classes seen at least once.
  double min_class_coverage() const noexcept;

 private:
  std::size_t count_ = 0;
  std::size_t hits_ = 0;
  double size_sum_ = 0.0;
  double size_sq_sum_ = 0.0;
  std::vector<std::size_t> class_trials_;
  std::vector<std::size_t> class_hits_;
};

struct ReportRow {
  std::string method;
  std::size_t m = 0;
  double alpha = 0.0;
  double marginal_coverage = 0.0;
  double coverage_se = 0.0;
  double avg_size = 0.0;
  double size_se = 0.0;
  double min_class_coverage = 0.0;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct EvaluationReport {
  std::vector<ReportRow> rows;
  std::size_t repetitions = 0;
  /// Smallest per-class calibration count over every calibration draw.
  std::size_t min_class_count = 0;

  /// Throws std::out_of_range if absent.
  const ReportRow& row(std::string_view method, std::size_t m, double alpha) const;
};

/// Runs every method for every m and alpha over config.repetitions fresh
/// multi-inputs; calibration is redrawn every config.block_size repetitions.
EvaluationReport run_benchmark(const SyntheticConfig& config, std::span<const Method> methods,
                               std::span<const double> alphas);
EvaluationReport run_benchmark(const SyntheticConfig& config);

/// Uniform trajectories on A(n, m) plus the quantile-score and majority-vote
/// lower envelopes at level alpha, for plotting.
struct EnvelopeSample {
  std::size_t n = 0;
  std::size_t m = 0;
  std::vector<Trajectory> samples;
  std::vector<std::size_t> quantile_envelope;  // numerators, one per sorted index
  std::vector<std::size_t> majority_envelope;
};

EnvelopeSample sample_envelopes(std::size_t n, std::size_t m, std::size_t count, double alpha,
                                std::size_t budget, std::uint64_t seed);

}  // namespace ccmi
