#include "ccmi/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <tuple>

#include "ccmi/errors.hpp"

namespace ccmi {

const char* to_string(WarningKind kind) noexcept {
  switch (kind) {
    case WarningKind::EmptyClass:
      return "empty-class";
    case WarningKind::UndersizedClass:
      return "undersized-class";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// ClassCalibration

ClassCalibration::ClassCalibration(std::size_t label, std::vector<double> scores,
                                   std::vector<double> tie_uniforms)
    : label_(label) {
  if (scores.size() != tie_uniforms.size()) {
    throw DomainError("class " + std::to_string(label) + ": scores and tie uniforms differ in length");
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) {
      throw DomainError("class " + std::to_string(label) + ": non-finite calibration score");
    }
    if (!(tie_uniforms[i] >= 0.0 && tie_uniforms[i] <= 1.0)) {
      throw DomainError("class " + std::to_string(label) + ": tie uniform outside [0, 1]");
    }
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) {
    return std::tie(scores[l], tie_uniforms[l], l) < std::tie(scores[r], tie_uniforms[r], r);
  });
  scores_.reserve(order.size());
  uniforms_.reserve(order.size());
  for (std::size_t i : order) {
    scores_.push_back(scores[i]);
    uniforms_.push_back(tie_uniforms[i]);
  }
}

ClassCalibration ClassCalibration::with_drawn_uniforms(std::size_t label, std::vector<double> scores,
                                                       Rng& rng) {
  std::vector<double> uniforms(scores.size());
  for (double& u : uniforms) u = uniform01(rng);
  return ClassCalibration(label, std::move(scores), std::move(uniforms));
}

std::size_t ClassCalibration::count_at_least(double score) const noexcept {
  auto lo = std::lower_bound(scores_.begin(), scores_.end(), score);
  return static_cast<std::size_t>(scores_.end() - lo);
}

std::size_t ClassCalibration::randomized_count(double score, double u) const noexcept {
  auto [lo, hi] = std::equal_range(scores_.begin(), scores_.end(), score);
  const auto greater = static_cast<std::size_t>(scores_.end() - hi);
  if (lo == hi) return greater;
  // Uniforms inside a tie run are ascending, so #{U_i >= u} is a suffix.
  auto ulo = uniforms_.begin() + (lo - scores_.begin());
  auto uhi = uniforms_.begin() + (hi - scores_.begin());
  return greater + static_cast<std::size_t>(uhi - std::lower_bound(ulo, uhi, u));
}

double ClassCalibration::order_statistic(std::size_t k) const {
  if (k == 0 || k > scores_.size()) {
    throw DomainError("order statistic " + std::to_string(k) + " out of range for n=" +
                      std::to_string(scores_.size()));
  }
  return scores_[k - 1];
}

// ---------------------------------------------------------------------------
// CalibrationSet

CalibrationSet::CalibrationSet(std::vector<ClassCalibration> classes) : classes_(std::move(classes)) {
  for (std::size_t y = 0; y < classes_.size(); ++y) {
    if (classes_[y].label() != y) {
      throw DomainError("calibration classes must be indexed by label (slot " + std::to_string(y) +
                        " holds label " + std::to_string(classes_[y].label()) + ")");
    }
  }
}

CalibrationSet CalibrationSet::from_rows(std::span<const std::size_t> labels,
                                         std::span<const double> scores, std::size_t num_classes,
                                         Rng& rng) {
  if (labels.size() != scores.size()) throw DomainError("labels and scores differ in length");
  std::vector<std::vector<double>> per_class_scores(num_classes);
  std::vector<std::vector<double>> per_class_uniforms(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw DomainError("label " + std::to_string(labels[i]) + " >= K=" + std::to_string(num_classes));
    }
    per_class_scores[labels[i]].push_back(scores[i]);
    per_class_uniforms[labels[i]].push_back(uniform01(rng));
  }
  std::vector<ClassCalibration> classes;
  classes.reserve(num_classes);
  for (std::size_t y = 0; y < num_classes; ++y) {
    classes.emplace_back(y, std::move(per_class_scores[y]), std::move(per_class_uniforms[y]));
  }
  return CalibrationSet(std::move(classes));
}

std::vector<std::size_t> CalibrationSet::class_counts() const {
  std::vector<std::size_t> counts;
  counts.reserve(classes_.size());
  for (const auto& c : classes_) counts.push_back(c.size());
  return counts;
}

std::size_t CalibrationSet::total_size() const noexcept {
  std::size_t n = 0;
  for (const auto& c : classes_) n += c.size();
  return n;
}

// ---------------------------------------------------------------------------
// MultiInputScores

MultiInputScores::MultiInputScores(std::size_t m, std::size_t num_classes,
                                   std::vector<double> row_major_scores,
                                   std::vector<double> obs_uniforms)
    : m_(m), k_(num_classes), scores_(std::move(row_major_scores)), uniforms_(std::move(obs_uniforms)) {
  if (m_ == 0) throw DomainError("multi-input needs at least one observation");
  if (scores_.size() != m_ * k_) throw DomainError("multi-input score matrix is not m x K");
  if (uniforms_.size() != m_) throw DomainError("need exactly one tie uniform per observation");
  for (double u : uniforms_) {
    if (!(u >= 0.0 && u <= 1.0)) throw DomainError("observation uniform outside [0, 1]");
  }
}

MultiInputScores MultiInputScores::with_drawn_uniforms(std::size_t m, std::size_t num_classes,
                                                       std::vector<double> row_major_scores, Rng& rng) {
  std::vector<double> uniforms(m);
  for (double& u : uniforms) u = uniform01(rng);
  return MultiInputScores(m, num_classes, std::move(row_major_scores), std::move(uniforms));
}

// ---------------------------------------------------------------------------
// p-values

namespace {

void require_defined(const ClassCalibration& cal) {
  if (cal.empty()) {
    throw DomainError("class " + std::to_string(cal.label()) + " has no calibration points");
  }
}

void require_level(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must lie in (0, 1)");
}

}  // namespace

GridPValue plain_pvalue(const ClassCalibration& cal, double test_score) {
  require_defined(cal);
  return {cal.count_at_least(test_score), cal.size()};
}

GridPValue randomized_pvalue(const ClassCalibration& cal, double test_score, double obs_uniform) {
  require_defined(cal);
  return {cal.randomized_count(test_score, obs_uniform), cal.size()};
}

SortedPValueVector pvalue_trajectory(const ClassCalibration& cal, const MultiInputScores& test,
                                     std::size_t y) {
  require_defined(cal);
  if (y >= test.num_classes()) throw DomainError("class index outside the test score matrix");
  SortedPValueVector out;
  out.label = y;
  out.trajectory.denominator = cal.size();
  out.trajectory.numerators.resize(test.m());
  for (std::size_t j = 0; j < test.m(); ++j) {
    out.trajectory.numerators[j] = cal.randomized_count(test.score(j, y), test.obs_uniform(j));
  }
  std::sort(out.trajectory.numerators.begin(), out.trajectory.numerators.end());
  return out;
}

std::size_t rejection_rank(std::size_t n, double alpha) {
  require_level(alpha);
  return floor_times(n + 1, alpha);
}

bool in_class_conditional_set(const ClassCalibration& cal, double score, double alpha) {
  const std::size_t needed = rejection_rank(cal.size(), alpha);
  // needed == 0 covers the empty class as well as undersized ones.
  return needed == 0 || cal.count_at_least(score) >= needed;
}

PredictionSet class_conditional_set(const CalibrationSet& cals, std::span<const double> score_row,
                                    double alpha) {
  if (score_row.size() != cals.num_classes()) {
    throw DomainError("score row has " + std::to_string(score_row.size()) + " entries, expected K=" +
                      std::to_string(cals.num_classes()));
  }
  PredictionSet set;
  set.diagnostics.resize(cals.num_classes());
  for (std::size_t y = 0; y < cals.num_classes(); ++y) {
    const auto& cal = cals[y];
    if (cal.empty()) {
      set.warnings.push_back({y, WarningKind::EmptyClass});
      set.diagnostics[y] = 1.0;
      set.members.push_back(y);
      continue;
    }
    set.diagnostics[y] = plain_pvalue(cal, score_row[y]).value();
    if (rejection_rank(cal.size(), alpha) == 0) set.warnings.push_back({y, WarningKind::UndersizedClass});
    if (in_class_conditional_set(cal, score_row[y], alpha)) set.members.push_back(y);
  }
  return set;
}

double marginal_pvalue(std::span<const double> sorted_pooled_scores, double test_score) {
  auto lo = std::lower_bound(sorted_pooled_scores.begin(), sorted_pooled_scores.end(), test_score);
  const auto at_least = static_cast<double>(sorted_pooled_scores.end() - lo);
  return (at_least + 1.0) / (static_cast<double>(sorted_pooled_scores.size()) + 1.0);
}

PredictionSet marginal_split_set(std::span<const double> sorted_pooled_scores,
                                 std::span<const double> score_row, double alpha) {
  require_level(alpha);
  if (!std::is_sorted(sorted_pooled_scores.begin(), sorted_pooled_scores.end())) {
    throw DomainError("pooled calibration scores must be sorted ascending");
  }
  const std::size_t n = sorted_pooled_scores.size();
  const std::size_t rank = ceil_times(n + 1, 1.0 - alpha);
  PredictionSet set;
  set.diagnostics.resize(score_row.size());
  for (std::size_t y = 0; y < score_row.size(); ++y) {
    set.diagnostics[y] = marginal_pvalue(sorted_pooled_scores, score_row[y]);
    if (rank > n || score_row[y] <= sorted_pooled_scores[rank - 1]) set.members.push_back(y);
  }
  return set;
}

}  // namespace ccmi
