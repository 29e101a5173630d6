#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sabm {

struct Series {
  std::string label;
  std::vector<double> values;  // one per round, round r at index r-1
};

struct DetectorVerdict {
  bool fired = false;
  std::optional<double> detail;  // target p, observed width, or onset round
  std::size_t window_start = 0;  // 1-based rounds, inclusive
  std::size_t window_end = 0;
};

/// Convergence over the trailing `span` rounds: p is the window median and
/// eps = 0.05 * (p_monopoly - p_bertrand). Fires when at most
/// floor(theta * span) values fall outside [p - eps, p + eps].
DetectorVerdict converged(std::span<const double> series, double p_monopoly, double p_bertrand,
                          std::size_t span = 400, double theta = 0.01);

/// Fires when max - min over the trailing `span` values is <= bound.
DetectorVerdict bounded_oscillation(std::span<const double> series, double bound, std::size_t span = 800);

/// Earliest round r (1-based) at which the window [r - window + 1, r] has
/// mean |delta p| < max_mean_change and every value in (p_bertrand,
/// p_monopoly].
DetectorVerdict stable_collusion_onset(std::span<const double> series, double p_bertrand, double p_monopoly,
                                       std::size_t window = 100, double max_mean_change = 0.5);

struct MannWhitneyResult {
  double u = 0.0;  // U statistic of the first sample
  double p_two_sided = 1.0;
  bool exact = false;
};

/// Two-sided Mann-Whitney U with midranks. Exact permutation distribution
/// when either side has fewer than 8 observations, otherwise the normal
/// approximation with tie and continuity correction.
MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b);

/// Exact two-sided p from the full permutation distribution of U (midrank
/// aware), regardless of sample size.
double mann_whitney_exact_p(std::span<const double> a, std::span<const double> b);

struct ProportionTestResult {
  double p_two_sided = 1.0;
  bool exact = false;  // true when the hypergeometric path was used
};

/// Pooled two-proportion z-test; falls back to Fisher's exact test when an
/// expected cell is below 5 or an observed cell is empty.
ProportionTestResult two_proportion_test(long k1, long n1, long k2, long n2);

struct Bin {
  std::size_t first_round = 0;  // 1-based inclusive
  std::size_t last_round = 0;
  double mean = 0.0;
};

/// Most recent complete bins of `bin` rounds, oldest first, at most
/// `max_bins` of them. A partial trailing bin is dropped.
std::vector<Bin> summarize_bins(std::span<const double> series, std::size_t bin = 20, std::size_t max_bins = 20);

double median(std::vector<double> values);
double mean(std::span<const double> values);

}  // namespace sabm
