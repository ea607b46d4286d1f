#include "ccmi/discrete_dist.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ccmi/errors.hpp"

namespace ccmi {

namespace {

constexpr double kSnap = 1e-9;

double log_choose(std::int64_t n, std::int64_t k) noexcept {
  return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(n - k) + 1.0);
}

void require_level(double alpha, const char* what) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw DomainError(std::string(what) + " must lie in (0, 1), got " + std::to_string(alpha));
  }
}

// Largest q in [0, m] with cdf(q - 1) <= alpha, scanning pmf values in order.
template <typename PmfAt>
std::int64_t max_threshold(std::int64_t m, double alpha, PmfAt&& pmf_at) {
  std::int64_t q = 0;
  double cdf = 0.0;
  for (std::int64_t k = 1; k <= m; ++k) {
    cdf += pmf_at(k - 1);
    if (cdf > alpha + kCdfTolerance) break;
    q = k;
  }
  return q;
}

}  // namespace

std::size_t floor_times(std::size_t count, double p) {
  const double x = static_cast<double>(count) * p;
  const double r = std::round(x);
  if (std::abs(x - r) <= kSnap * std::max(1.0, std::abs(x))) return static_cast<std::size_t>(r);
  return static_cast<std::size_t>(std::floor(x));
}

std::size_t ceil_times(std::size_t count, double p) {
  const double x = static_cast<double>(count) * p;
  const double r = std::round(x);
  if (std::abs(x - r) <= kSnap * std::max(1.0, std::abs(x))) return static_cast<std::size_t>(r);
  return static_cast<std::size_t>(std::ceil(x));
}

// ---------------------------------------------------------------------------
// BetaBinomialDist

BetaBinomialDist::BetaBinomialDist(std::int64_t trials, std::int64_t a, std::int64_t b)
    : trials_(trials), a_(a), b_(b) {
  if (trials < 0 || a < 0 || b < 0) {
    throw DomainError("BetaBin parameters must be nonnegative (m=" + std::to_string(trials) +
                      ", a=" + std::to_string(a) + ", b=" + std::to_string(b) + ")");
  }
  if (a == 0 && b == 0) throw DomainError("BetaBin(m, 0, 0) is undefined");
}

double BetaBinomialDist::log_pmf(std::int64_t k) const noexcept {
  return log_choose(k + a_ - 1, k) + log_choose(trials_ - k + b_ - 1, trials_ - k) -
         log_choose(trials_ - 1 + a_ + b_, trials_);
}

double BetaBinomialDist::pmf(std::int64_t k) const {
  if (k < 0 || k > trials_) {
    throw DomainError("BetaBin pmf: k=" + std::to_string(k) + " outside [0, " +
                      std::to_string(trials_) + "]");
  }
  if (a_ == 0) return k == 0 ? 1.0 : 0.0;
  if (b_ == 0) return k == trials_ ? 1.0 : 0.0;
  return std::exp(log_pmf(k));
}

double BetaBinomialDist::cdf(std::int64_t k) const noexcept {
  if (k < 0) return 0.0;
  if (k >= trials_) return 1.0;
  if (a_ == 0) return 1.0;
  if (b_ == 0) return 0.0;
  double total = 0.0;
  for (std::int64_t i = 0; i <= k; ++i) total += std::exp(log_pmf(i));
  return std::min(total, 1.0);
}

std::vector<double> BetaBinomialDist::pmf_table() const {
  std::vector<double> table(static_cast<std::size_t>(trials_) + 1);
  for (std::int64_t k = 0; k <= trials_; ++k) table[static_cast<std::size_t>(k)] = pmf(k);
  return table;
}

std::vector<double> BetaBinomialDist::cdf_table() const {
  std::vector<double> table = pmf_table();
  double running = 0.0;
  for (double& v : table) {
    running += v;
    v = std::min(running, 1.0);
  }
  table.back() = 1.0;
  return table;
}

std::int64_t BetaBinomialDist::upper_quantile(double alpha) const {
  require_level(alpha, "alpha");
  if (a_ == 0) return 0;
  if (b_ == 0) return trials_;
  return max_threshold(trials_, alpha, [this](std::int64_t k) { return std::exp(log_pmf(k)); });
}

std::int64_t BetaBinomialDist::sample(Rng& rng) const {
  if (a_ == 0) return 0;
  if (b_ == 0) return trials_;
  auto white = static_cast<std::uint64_t>(a_);
  auto black = static_cast<std::uint64_t>(b_);
  std::int64_t successes = 0;
  for (std::int64_t draw = 0; draw < trials_; ++draw) {
    if (uniform_int(rng, 0, white + black - 1) < white) {
      ++white;
      ++successes;
    } else {
      ++black;
    }
  }
  return successes;
}

double betabin_pmf(const BetaBinomialDist& dist, std::int64_t k) { return dist.pmf(k); }
double betabin_cdf(const BetaBinomialDist& dist, std::int64_t k) noexcept { return dist.cdf(k); }
std::int64_t betabin_upper_quantile(const BetaBinomialDist& dist, double alpha) {
  return dist.upper_quantile(alpha);
}
std::int64_t betabin_sample(const BetaBinomialDist& dist, Rng& rng) { return dist.sample(rng); }

// ---------------------------------------------------------------------------
// Binomial

double binomial_pmf(std::int64_t m, double p, std::int64_t k) {
  if (m < 0 || k < 0 || k > m) throw DomainError("binomial pmf: k outside [0, m]");
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("binomial pmf: p outside [0, 1]");
  if (p == 0.0) return k == 0 ? 1.0 : 0.0;
  if (p == 1.0) return k == m ? 1.0 : 0.0;
  return std::exp(log_choose(m, k) + static_cast<double>(k) * std::log(p) +
                  static_cast<double>(m - k) * std::log1p(-p));
}

double binomial_cdf(std::int64_t m, double p, std::int64_t k) {
  if (k < 0) return 0.0;
  if (k >= m) return 1.0;
  double total = 0.0;
  for (std::int64_t i = 0; i <= k; ++i) total += binomial_pmf(m, p, i);
  return std::min(total, 1.0);
}

std::int64_t binomial_upper_quantile(std::int64_t m, double p, double alpha) {
  if (m < 1) throw DomainError("binomial quantile: m must be >= 1");
  require_level(p, "p");
  require_level(alpha, "alpha");
  return max_threshold(m, alpha, [m, p](std::int64_t k) { return binomial_pmf(m, p, k); });
}

// ---------------------------------------------------------------------------
// Trajectories

TrajectoryGrid::TrajectoryGrid(std::size_t denominator, std::size_t length)
    : n(denominator), m(length) {
  if (n == 0 || m == 0) throw DomainError("trajectory grid needs n >= 1 and m >= 1");
}

__extension__ using Wide = unsigned __int128;

std::uint64_t TrajectoryGrid::cardinality() const {
  Wide c = 1;
  for (std::size_t i = 1; i <= m; ++i) {
    c = c * (n + i) / i;
    if (c > std::numeric_limits<std::uint64_t>::max()) {
      throw DomainError("|A(n, m)| overflows 64 bits");
    }
  }
  return static_cast<std::uint64_t>(c);
}

std::vector<double> Trajectory::values() const {
  std::vector<double> out(numerators.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = value(j);
  return out;
}

bool Trajectory::on_grid() const noexcept {
  if (denominator == 0) return false;
  for (std::size_t j = 0; j < numerators.size(); ++j) {
    if (numerators[j] > denominator) return false;
    if (j > 0 && numerators[j] < numerators[j - 1]) return false;
  }
  return true;
}

void sample_trajectory_into(const TrajectoryGrid& grid, Rng& rng, std::span<std::size_t> out) {
  if (out.size() != grid.m) throw DomainError("sample_trajectory_into: output span has wrong size");
  // Floyd's subset sampling keeps `out[0, filled)` sorted; the candidate j is
  // always larger than every element already drawn.
  const std::size_t total = grid.n + grid.m;
  std::size_t filled = 0;
  for (std::size_t j = total - grid.m + 1; j <= total; ++j) {
    const auto t = static_cast<std::size_t>(uniform_int(rng, 1, j));
    auto* begin = out.data();
    auto* end = begin + filled;
    auto* pos = std::lower_bound(begin, end, t);
    if (pos != end && *pos == t) {
      *end = j;
    } else {
      std::move_backward(pos, end, end + 1);
      *pos = t;
    }
    ++filled;
  }
  for (std::size_t i = 0; i < grid.m; ++i) out[i] -= i + 1;
}

Trajectory sample_trajectory(const TrajectoryGrid& grid, Rng& rng) {
  Trajectory traj;
  traj.denominator = grid.n;
  traj.numerators.resize(grid.m);
  sample_trajectory_into(grid, rng, traj.numerators);
  return traj;
}

double tv_bound(std::int64_t m, std::int64_t n, double alpha) {
  if (m < 1 || n < 1) throw DomainError("tv_bound needs m >= 1 and n >= 1");
  require_level(alpha, "alpha");
  return static_cast<double>(m - 1) * std::min(1.0, static_cast<double>(m) * alpha) /
         static_cast<double>(n + 2);
}

}  // namespace ccmi
