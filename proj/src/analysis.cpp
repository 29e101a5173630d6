#include "sabm/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sabm/error.hpp"

namespace sabm {

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  const std::size_t n = values.size();
  auto mid = values.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(values.begin(), mid, values.end());
  const double upper = *mid;
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), mid);
  return lower + (upper - lower) / 2.0;
}

double mean(std::span<const double> values) {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

DetectorVerdict converged(std::span<const double> series, double p_monopoly, double p_bertrand, std::size_t span,
                          double theta) {
  if (span == 0) throw DomainError("convergence span must be >= 1");
  if (!(p_monopoly > p_bertrand)) throw DomainError("convergence needs p_monopoly > p_bertrand");
  DetectorVerdict v;
  if (series.size() < span) return v;
  const auto window = series.subspan(series.size() - span);
  const double p = median(std::vector<double>(window.begin(), window.end()));
  const double eps = 0.05 * (p_monopoly - p_bertrand);
  // 1e-9 guards floor(0.01 * 400) against representation error.
  const auto budget = static_cast<std::size_t>(std::floor(theta * static_cast<double>(span) + 1e-9));
  const auto outside = static_cast<std::size_t>(
      std::count_if(window.begin(), window.end(), [&](double x) { return std::abs(x - p) > eps; }));
  v.window_start = series.size() - span + 1;
  v.window_end = series.size();
  if (outside <= budget) {
    v.fired = true;
    v.detail = p;
  }
  return v;
}

DetectorVerdict bounded_oscillation(std::span<const double> series, double bound, std::size_t span) {
  if (span == 0) throw DomainError("oscillation span must be >= 1");
  DetectorVerdict v;
  if (series.size() < span) return v;
  const auto window = series.subspan(series.size() - span);
  const auto [lo, hi] = std::minmax_element(window.begin(), window.end());
  const double width = *hi - *lo;
  v.window_start = series.size() - span + 1;
  v.window_end = series.size();
  if (width <= bound) {
    v.fired = true;
    v.detail = width;
  }
  return v;
}

DetectorVerdict stable_collusion_onset(std::span<const double> series, double p_bertrand, double p_monopoly,
                                       std::size_t window, double max_mean_change) {
  if (window < 2) throw DomainError("collusion window must be >= 2");
  DetectorVerdict v;
  const std::size_t n = series.size();
  if (n < window) return v;
  // Relative slack so a price sitting on a computed reference is not read as above it.
  const double tol = 1e-9 * (1.0 + std::abs(p_bertrand) + std::abs(p_monopoly));
  auto in_range = [&](double x) { return x > p_bertrand + tol && x <= p_monopoly + tol; };
  // Sliding sums of |delta| and of out-of-range counts.
  double delta_sum = 0.0;
  std::size_t out_of_range = 0;
  for (std::size_t i = 0; i < window; ++i) {
    if (!in_range(series[i])) ++out_of_range;
    if (i > 0) delta_sum += std::abs(series[i] - series[i - 1]);
  }
  const double diffs = static_cast<double>(window - 1);
  for (std::size_t end = window;; ++end) {
    // window covers indices [end - window, end - 1]
    if (out_of_range == 0 && delta_sum / diffs < max_mean_change) {
      v.fired = true;
      v.detail = static_cast<double>(end);
      v.window_start = end - window + 1;
      v.window_end = end;
      return v;
    }
    if (end == n) break;
    const std::size_t drop = end - window;
    if (!in_range(series[drop])) --out_of_range;
    if (!in_range(series[end])) ++out_of_range;
    delta_sum -= std::abs(series[drop + 1] - series[drop]);
    delta_sum += std::abs(series[end] - series[end - 1]);
    // Recompute occasionally to keep rounding drift out of the threshold test.
    if (end % 1024 == 0) {
      delta_sum = 0.0;
      for (std::size_t i = drop + 2; i <= end; ++i) delta_sum += std::abs(series[i] - series[i - 1]);
    }
  }
  return v;
}

// ---------------------------------------------------------------------------
// Mann-Whitney U

namespace {

struct Ranked {
  std::vector<long> doubled_ranks;  // 2 * midrank, integral
  double tie_term = 0.0;            // sum of t^3 - t over tie groups
};

Ranked rank_pooled(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size() + b.size();
  std::vector<std::pair<double, std::size_t>> pooled;
  pooled.reserve(n);
  for (std::size_t i = 0; i < a.size(); ++i) pooled.emplace_back(a[i], i);
  for (std::size_t i = 0; i < b.size(); ++i) pooled.emplace_back(b[i], a.size() + i);
  std::sort(pooled.begin(), pooled.end());
  Ranked r;
  r.doubled_ranks.assign(n, 0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && pooled[j + 1].first == pooled[i].first) ++j;
    // ranks i+1..j+1 share midrank (i+j+2)/2, doubled: i+j+2
    const long doubled = static_cast<long>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k) r.doubled_ranks[pooled[k].second] = doubled;
    const double t = static_cast<double>(j - i + 1);
    r.tie_term += t * t * t - t;
    i = j + 1;
  }
  return r;
}

void check_samples(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw EmptySample("Mann-Whitney U needs two non-empty samples");
  for (double x : a)
    if (!std::isfinite(x)) throw DomainError("non-finite value in sample");
  for (double x : b)
    if (!std::isfinite(x)) throw DomainError("non-finite value in sample");
}

double u_of_first(const Ranked& r, std::size_t n1) {
  long sum = 0;
  for (std::size_t i = 0; i < n1; ++i) sum += r.doubled_ranks[i];
  const double n1d = static_cast<double>(n1);
  return static_cast<double>(sum) / 2.0 - n1d * (n1d + 1.0) / 2.0;
}

}  // namespace

double mann_whitney_exact_p(std::span<const double> a, std::span<const double> b) {
  check_samples(a, b);
  const Ranked r = rank_pooled(a, b);
  const std::size_t n1 = a.size();
  const std::size_t n2 = b.size();
  const std::size_t n = n1 + n2;
  const double mu = static_cast<double>(n1) * static_cast<double>(n2) / 2.0;
  const double observed = std::abs(u_of_first(r, n1) - mu);

  // Count subsets by size of the smaller side and doubled rank sum.
  const std::size_t k = std::min(n1, n2);
  const long max_sum = std::accumulate(r.doubled_ranks.begin(), r.doubled_ranks.end(), 0L);
  std::vector<std::vector<double>> ways(k + 1, std::vector<double>(static_cast<std::size_t>(max_sum) + 1, 0.0));
  ways[0][0] = 1.0;
  long reached = 0;
  for (std::size_t item = 0; item < n; ++item) {
    const long w = r.doubled_ranks[item];
    reached += w;
    for (std::size_t size = std::min(k, item + 1); size >= 1; --size) {
      auto& row = ways[size];
      const auto& prev = ways[size - 1];
      for (long s = reached; s >= w; --s) {
        const double c = prev[static_cast<std::size_t>(s - w)];
        if (c != 0.0) row[static_cast<std::size_t>(s)] += c;
      }
    }
  }
  const double kd = static_cast<double>(k);
  double total = 0.0;
  double tail = 0.0;
  for (long s = 0; s <= max_sum; ++s) {
    const double c = ways[k][static_cast<std::size_t>(s)];
    if (c == 0.0) continue;
    total += c;
    // U of the subset side; |U - mu| is the same for either side.
    const double u = static_cast<double>(s) / 2.0 - kd * (kd + 1.0) / 2.0;
    if (std::abs(u - mu) >= observed - 1e-9) tail += c;
  }
  return std::min(1.0, tail / total);
}

MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  check_samples(a, b);
  const Ranked r = rank_pooled(a, b);
  MannWhitneyResult out;
  const std::size_t n1 = a.size();
  const std::size_t n2 = b.size();
  out.u = u_of_first(r, n1);
  if (n1 < 8 || n2 < 8) {
    out.exact = true;
    out.p_two_sided = mann_whitney_exact_p(a, b);
    return out;
  }
  const double n1d = static_cast<double>(n1);
  const double n2d = static_cast<double>(n2);
  const double nd = n1d + n2d;
  const double mu = n1d * n2d / 2.0;
  const double var = n1d * n2d / 12.0 * ((nd + 1.0) - r.tie_term / (nd * (nd - 1.0)));
  if (var <= 0.0) {
    out.p_two_sided = 1.0;
    return out;
  }
  const double z = std::max(0.0, std::abs(out.u - mu) - 0.5) / std::sqrt(var);
  out.p_two_sided = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return out;
}

// ---------------------------------------------------------------------------
// Proportions

namespace {

double log_choose(long n, long k) {
  return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(n - k) + 1.0);
}

double fisher_exact_two_sided(long k1, long n1, long k2, long n2) {
  const long total_success = k1 + k2;
  const long n = n1 + n2;
  const long lo = std::max(0L, total_success - n2);
  const long hi = std::min(total_success, n1);
  const double log_denom = log_choose(n, total_success);
  auto log_p = [&](long x) { return log_choose(n1, x) + log_choose(n2, total_success - x) - log_denom; };
  const double observed = log_p(k1);
  double p = 0.0;
  for (long x = lo; x <= hi; ++x) {
    const double lp = log_p(x);
    // Relative tolerance so tables tied with the observed one are counted.
    if (lp <= observed + 1e-7) p += std::exp(lp);
  }
  return std::min(1.0, p);
}

}  // namespace

ProportionTestResult two_proportion_test(long k1, long n1, long k2, long n2) {
  if (n1 < 1 || n2 < 1) throw DomainError("sample sizes must be >= 1");
  if (k1 < 0 || k2 < 0 || k1 > n1 || k2 > n2) throw DomainError("successes must lie in [0, n]");
  ProportionTestResult out;
  const double pooled = static_cast<double>(k1 + k2) / static_cast<double>(n1 + n2);
  const double e[] = {n1 * pooled, n1 * (1.0 - pooled), n2 * pooled, n2 * (1.0 - pooled)};
  const bool small_expected = std::any_of(std::begin(e), std::end(e), [](double x) { return x < 5.0; });
  const bool empty_cell = k1 == 0 || k1 == n1 || k2 == 0 || k2 == n2;
  if (small_expected || empty_cell) {
    out.exact = true;
    out.p_two_sided = fisher_exact_two_sided(k1, n1, k2, n2);
    return out;
  }
  const double se = std::sqrt(pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2));
  const double diff = static_cast<double>(k1) / n1 - static_cast<double>(k2) / n2;
  if (se == 0.0) {
    out.p_two_sided = 1.0;
    return out;
  }
  out.p_two_sided = std::min(1.0, std::erfc(std::abs(diff / se) / std::sqrt(2.0)));
  return out;
}

std::vector<Bin> summarize_bins(std::span<const double> series, std::size_t bin, std::size_t max_bins) {
  if (bin == 0) throw DomainError("bin width must be >= 1");
  std::vector<Bin> out;
  const std::size_t complete = series.size() / bin;
  const std::size_t take = std::min(complete, max_bins);
  for (std::size_t b = complete - take; b < complete; ++b) {
    Bin x;
    x.first_round = b * bin + 1;
    x.last_round = (b + 1) * bin;
    x.mean = mean(series.subspan(b * bin, bin));
    out.push_back(x);
  }
  return out;
}

}  // namespace sabm
