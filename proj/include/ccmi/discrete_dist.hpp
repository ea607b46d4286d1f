#pragma once

// Exact discrete laws behind every coverage guarantee: the beta-binomial
// (negative hypergeometric for integer parameters), binomial quantiles, and the
// uniform law on ordered p-value trajectories.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ccmi/seeding.hpp"

namespace ccmi {

/// Slack used when comparing a computed cdf against a level, so that values
/// that are exactly equal in rational arithmetic (e.g. cdf(0) = 1/10 at
/// alpha = 0.1) are not separated by rounding.
inline constexpr double kCdfTolerance = 1e-12;

/// floor(count * p) and ceil(count * p), snapping products that land within
/// 1e-9 of an integer onto it (0.9 * 20 must give 18, not 19).
std::size_t floor_times(std::size_t count, double p);
std::size_t ceil_times(std::size_t count, double p);

/// BetaBin(m, a, b) with nonnegative integer parameters. a = 0 is the point
/// mass at 0 and b = 0 the point mass at m; a = b = 0 is rejected.
class BetaBinomialDist {
 public:
  BetaBinomialDist(std::int64_t trials, std::int64_t a, std::int64_t b);

  std::int64_t trials() const noexcept { return trials_; }
  std::int64_t alpha_param() const noexcept { return a_; }
  std::int64_t beta_param() const noexcept { return b_; }

  /// Throws DomainError unless 0 <= k <= trials.
  double pmf(std::int64_t k) const;
  /// P(X <= k); 0 below the support, 1 above it.
  double cdf(std::int64_t k) const noexcept;

  /// pmf(0..m) and cdf(0..m) in one pass.
  std::vector<double> pmf_table() const;
  std::vector<double> cdf_table() const;

  /// Largest q in [0, m] with cdf(q - 1) <= alpha, i.e. the largest vote
  /// threshold keeping P(X >= q) >= 1 - alpha. Requires 0 < alpha < 1.
  std::int64_t upper_quantile(double alpha) const;

  /// One draw via a Polya urn seeded with a successes and b failures.
  std::int64_t sample(Rng& rng) const;

 private:
  double log_pmf(std::int64_t k) const noexcept;

  std::int64_t trials_;
  std::int64_t a_;
  std::int64_t b_;
};

double betabin_pmf(const BetaBinomialDist& dist, std::int64_t k);
double betabin_cdf(const BetaBinomialDist& dist, std::int64_t k) noexcept;
std::int64_t betabin_upper_quantile(const BetaBinomialDist& dist, double alpha);
std::int64_t betabin_sample(const BetaBinomialDist& dist, Rng& rng);

double binomial_pmf(std::int64_t m, double p, std::int64_t k);
double binomial_cdf(std::int64_t m, double p, std::int64_t k);

/// Same max-threshold convention as BetaBinomialDist::upper_quantile, applied
/// to Binomial(m, p). Requires m >= 1 and p, alpha in (0, 1).
std::int64_t binomial_upper_quantile(std::int64_t m, double p, double alpha);

/// The grid A(n, m) of nondecreasing length-m vectors over {0, 1/n, ..., 1}.
struct TrajectoryGrid {
  std::size_t n;
  std::size_t m;

  TrajectoryGrid(std::size_t denominator, std::size_t length);

  /// |A(n, m)| = C(n + m, m). Throws DomainError if it overflows 64 bits.
  std::uint64_t cardinality() const;
};

/// A point of A(n, m), stored as integer numerators over n so membership is
/// exact.
struct Trajectory {
  std::vector<std::size_t> numerators;
  std::size_t denominator = 1;

  std::size_t size() const noexcept { return numerators.size(); }
  double value(std::size_t j) const noexcept {
    return static_cast<double>(numerators[j]) / static_cast<double>(denominator);
  }
  std::vector<double> values() const;

  /// True iff nondecreasing with every numerator in [0, denominator].
  bool on_grid() const noexcept;

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
  friend auto operator<=>(const Trajectory&, const Trajectory&) = default;
};

/// Uniform draw from A(n, m): pick m distinct ranks from [1, n + m], sort them,
/// subtract i from the i-th order statistic.
Trajectory sample_trajectory(const TrajectoryGrid& grid, Rng& rng);

/// Allocation-free variant for Monte Carlo loops; `out` must have size m.
void sample_trajectory_into(const TrajectoryGrid& grid, Rng& rng, std::span<std::size_t> out);

/// (m - 1) * min(1, m * alpha) / (n + 2): bound on the total variation between
/// Binomial(m, k/(n+1)) and BetaBin(m, k, n + 1 - k) for k = ceil((n+1)(1-alpha)).
double tv_bound(std::int64_t m, std::int64_t n, double alpha);

}  // namespace ccmi
