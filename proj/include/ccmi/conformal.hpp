#pragma once

// Conformal score bookkeeping: per-class calibration samples, class-conditional
// p-values (plain and tie-randomized), sorted p-value trajectories and the
// single-input split / class-conditional prediction sets.

#include <cstddef>
#include <span>
#include <vector>

#include "ccmi/discrete_dist.hpp"
#include "ccmi/prediction_set.hpp"
#include "ccmi/seeding.hpp"

namespace ccmi {

/// A conformal p-value on the grid {0, 1/n, ..., 1}, kept as count / n.
struct GridPValue {
  std::size_t count = 0;
  std::size_t n = 1;

  double value() const noexcept { return static_cast<double>(count) / static_cast<double>(n); }
  friend bool operator==(const GridPValue&, const GridPValue&) = default;
};

/// Calibration scores of one class with their tie-breaking uniforms.
///
/// Scores are stored ascending; each uniform stays attached to its score. Within
/// a run of equal scores the order is (uniform, original index), which makes the
/// layout a total order and lets tie counts be found by binary search.
class ClassCalibration {
 public:
  ClassCalibration() = default;
  ClassCalibration(std::size_t label, std::vector<double> scores, std::vector<double> tie_uniforms);

  /// Draws one uniform per score from `rng`, in input order.
  static ClassCalibration with_drawn_uniforms(std::size_t label, std::vector<double> scores, Rng& rng);

  std::size_t label() const noexcept { return label_; }
  std::size_t size() const noexcept { return scores_.size(); }
  bool empty() const noexcept { return scores_.empty(); }
  std::span<const double> scores() const noexcept { return scores_; }
  std::span<const double> tie_uniforms() const noexcept { return uniforms_; }

  /// #{i : score <= S_i}
  std::size_t count_at_least(double score) const noexcept;
  /// #{i : score < S_i} + #{i : score == S_i and u <= U_i}
  std::size_t randomized_count(double score, double u) const noexcept;
  /// k-th smallest score, 1-based.
  double order_statistic(std::size_t k) const;

 private:
  std::size_t label_ = 0;
  std::vector<double> scores_;
  std::vector<double> uniforms_;
};

/// All classes of a calibration sample, indexed by label in [0, K).
class CalibrationSet {
 public:
  CalibrationSet() = default;
  explicit CalibrationSet(std::vector<ClassCalibration> classes);

  /// Groups (label, score) rows by class and draws the tie uniforms from `rng`
  /// in row order. Labels must be < num_classes.
  static CalibrationSet from_rows(std::span<const std::size_t> labels, std::span<const double> scores,
                                  std::size_t num_classes, Rng& rng);

  std::size_t num_classes() const noexcept { return classes_.size(); }
  const ClassCalibration& operator[](std::size_t y) const { return classes_.at(y); }
  std::span<const ClassCalibration> classes() const noexcept { return classes_; }
  std::vector<std::size_t> class_counts() const;
  std::size_t total_size() const noexcept;

 private:
  std::vector<ClassCalibration> classes_;
};

/// m observations of one instance scored against K classes, with one
/// tie-breaking uniform per observation shared by every class.
class MultiInputScores {
 public:
  MultiInputScores() = default;
  MultiInputScores(std::size_t m, std::size_t num_classes, std::vector<double> row_major_scores,
                   std::vector<double> obs_uniforms);

  static MultiInputScores with_drawn_uniforms(std::size_t m, std::size_t num_classes,
                                              std::vector<double> row_major_scores, Rng& rng);

  std::size_t m() const noexcept { return m_; }
  std::size_t num_classes() const noexcept { return k_; }
  double score(std::size_t j, std::size_t y) const noexcept { return scores_[j * k_ + y]; }
  std::span<const double> row(std::size_t j) const noexcept { return {scores_.data() + j * k_, k_}; }
  double obs_uniform(std::size_t j) const noexcept { return uniforms_[j]; }
  std::span<const double> obs_uniforms() const noexcept { return uniforms_; }

 private:
  std::size_t m_ = 0;
  std::size_t k_ = 0;
  std::vector<double> scores_;
  std::vector<double> uniforms_;
};

struct SortedPValueVector {
  std::size_t label = 0;
  Trajectory trajectory;  // element of A(n_y, m)
};

/// (1/n_y) #{i : test_score <= S_i^y}. Throws DomainError when n_y = 0.
GridPValue plain_pvalue(const ClassCalibration& cal, double test_score);

/// Tie-randomized p-value; never larger than plain_pvalue.
GridPValue randomized_pvalue(const ClassCalibration& cal, double test_score, double obs_uniform);

/// Randomized p-values of the m observations against class y, sorted ascending.
SortedPValueVector pvalue_trajectory(const ClassCalibration& cal, const MultiInputScores& test,
                                     std::size_t y);

/// floor((n + 1) * alpha): the number of calibration scores that must lie at or
/// above a test score for it to pass the level-alpha class-conditional test.
/// Zero means the class cannot be rejected at this level.
std::size_t rejection_rank(std::size_t n, double alpha);

/// Whether y enters the class-conditional set at level alpha:
/// score <= S^y_(ceil((1 - alpha)(n_y + 1))), with an infinite threshold when
/// that index exceeds n_y.
bool in_class_conditional_set(const ClassCalibration& cal, double score, double alpha);

/// Single-input class-conditional set. Classes with no finite threshold are
/// included and flagged in `warnings`. Diagnostics hold plain p-values (1 for
/// empty classes).
PredictionSet class_conditional_set(const CalibrationSet& cals, std::span<const double> score_row,
                                    double alpha);

/// Split conformal p-value over pooled scores: (#{S_i >= s} + 1) / (n + 1).
double marginal_pvalue(std::span<const double> sorted_pooled_scores, double test_score);

/// Marginal split-CP set with threshold S_(ceil((1 - alpha)(n + 1))) over the
/// pooled true-label scores (sorted ascending).
PredictionSet marginal_split_set(std::span<const double> sorted_pooled_scores,
                                 std::span<const double> score_row, double alpha);

}  // namespace ccmi
