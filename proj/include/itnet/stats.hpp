#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace itnet {

inline double mean_of(const std::vector<double>& x) {
  if (x.empty()) throw std::invalid_argument("mean of an empty sequence");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

// Sample standard deviation (n - 1 denominator).
inline double stddev_of(const std::vector<double>& x) {
  if (x.size() < 2) throw std::invalid_argument("standard deviation needs at least two values");
  const double m = mean_of(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

inline void require_paired(const std::vector<double>& a, const std::vector<double>& b, const char* what) {
  if (a.size() != b.size()) throw std::invalid_argument(std::string(what) + ": samples differ in length");
  if (a.size() < 2) throw std::invalid_argument(std::string(what) + ": at least two pairs are required");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!std::isfinite(a[i]) || !std::isfinite(b[i]))
      throw std::invalid_argument(std::string(what) + ": non-finite value at index " + std::to_string(i));
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank

enum class WilcoxonMethod { Auto, Exact, Normal };

struct WilcoxonOptions {
  WilcoxonMethod method = WilcoxonMethod::Auto;
  std::size_t exact_limit = 20;  // Auto: exact up to this many nonzero differences
  bool continuity = true;        // continuity correction on the normal path
  // Differences, and gaps between absolute differences, below this fraction of the
  // operands' magnitude count as zero / tied. Decimal data such as 82.29-80.20 and
  // 80.21-78.12 must tie even though the binary differences disagree in the last bit.
  double tie_tolerance = 1e-9;
};

struct WilcoxonResult {
  double W = 0.0;  // sum of ranks of negative differences
  double p = 1.0;
  std::size_t n_effective = 0;
  bool exact = true;
};

struct SignedRanks {
  std::vector<double> ranks;  // midranks of |d|, aligned with `negative`
  std::vector<bool> negative;
  std::vector<std::size_t> tie_sizes;
};

inline SignedRanks signed_ranks(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  struct Item {
    double abs_d;
    double scale;
    bool neg;
  };
  std::vector<Item> items;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), 1.0});
    if (std::abs(d) <= tol * scale) continue;
    items.push_back({std::abs(d), scale, d < 0.0});
  }
  std::stable_sort(items.begin(), items.end(), [](const Item& x, const Item& y) { return x.abs_d < y.abs_d; });
  SignedRanks sr;
  for (std::size_t i = 0; i < items.size();) {
    std::size_t j = i + 1;
    while (j < items.size() && items[j].abs_d - items[j - 1].abs_d <= tol * std::max(items[j].scale, items[j - 1].scale))
      ++j;
    const double mid = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      sr.ranks.push_back(mid);
      sr.negative.push_back(items[k].neg);
    }
    sr.tie_sizes.push_back(j - i);
    i = j;
  }
  return sr;
}

// Null distribution of the signed-rank statistic for the given (mid)ranks, as counts
// over the 2^n sign patterns indexed by twice the rank sum (midranks are multiples
// of one half, so doubled sums are integers).
inline std::vector<double> wilcoxon_null_counts(const std::vector<double>& ranks) {
  std::vector<std::size_t> doubled;
  std::size_t total = 0;
  for (double r : ranks) {
    doubled.push_back(static_cast<std::size_t>(std::llround(2.0 * r)));
    total += doubled.back();
  }
  std::vector<double> counts(total + 1, 0.0);
  counts[0] = 1.0;
  std::size_t reach = 0;
  for (auto r : doubled) {
    reach += r;
    for (std::size_t s = reach; s >= r; --s) {
      counts[s] += counts[s - r];
      if (s == r) break;
    }
  }
  return counts;
}

// One-sided test of a > b: small W (little rank mass on negative differences) is evidence.
inline WilcoxonResult wilcoxon_one_sided(const std::vector<double>& a, const std::vector<double>& b,
                                         const WilcoxonOptions& opt = {}) {
  require_paired(a, b, "wilcoxon");
  const auto sr = signed_ranks(a, b, opt.tie_tolerance);
  const std::size_t n = sr.ranks.size();
  if (n == 0) throw std::invalid_argument("wilcoxon: all differences are zero");

  WilcoxonResult res;
  res.n_effective = n;
  for (std::size_t i = 0; i < n; ++i)
    if (sr.negative[i]) res.W += sr.ranks[i];

  const bool exact = opt.method == WilcoxonMethod::Exact ||
                     (opt.method == WilcoxonMethod::Auto && n <= opt.exact_limit);
  res.exact = exact;
  if (exact) {
    if (n > 60) throw std::invalid_argument("wilcoxon: exact distribution limited to 60 differences");
    const auto counts = wilcoxon_null_counts(sr.ranks);
    const auto w2 = static_cast<std::size_t>(std::llround(2.0 * res.W));
    double hits = 0.0;
    for (std::size_t s = 0; s <= w2 && s < counts.size(); ++s) hits += counts[s];
    res.p = std::ldexp(hits, -static_cast<int>(n));
    return res;
  }
  const double nn = static_cast<double>(n);
  const double mu = nn * (nn + 1.0) / 4.0;
  double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0;
  for (auto t : sr.tie_sizes) {
    const double tt = static_cast<double>(t);
    var -= (tt * tt * tt - tt) / 48.0;
  }
  double num = res.W - mu;
  if (opt.continuity) num += 0.5;
  const double z = num / std::sqrt(var);
  res.p = 0.5 * std::erfc(-z / std::sqrt(2.0));
  return res;
}

// ---------------------------------------------------------------------------
// Paired t-test

namespace detail {
// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_cf(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) return h;
  }
  throw std::runtime_error("incomplete beta: continued fraction did not converge");
}
}  // namespace detail

// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw std::invalid_argument("incomplete_beta: a and b must be positive");
  if (x < 0.0 || x > 1.0) throw std::invalid_argument("incomplete_beta: x must lie in [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double lbt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(lbt);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_cf(a, b, x) / a;
  return 1.0 - front * detail::beta_cf(b, a, 1.0 - x) / b;
}

// P(T > t) for Student's t with df degrees of freedom.
inline double t_upper_tail(double t, double df) {
  const double tail = 0.5 * incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
  return t >= 0.0 ? tail : 1.0 - tail;
}

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

// Right-tailed paired t-test of mean(a - b) > 0.
inline TTestResult paired_t_right(const std::vector<double>& a, const std::vector<double>& b) {
  require_paired(a, b, "paired t-test");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double m = mean_of(d);
  const double sd = stddev_of(d);
  if (!(sd > 1e-12 * std::max(1.0, std::abs(m)))) throw std::invalid_argument("paired t-test: differences have zero variance");
  TTestResult r;
  r.df = static_cast<double>(d.size() - 1);
  r.t = m / (sd / std::sqrt(static_cast<double>(d.size())));
  r.p = t_upper_tail(r.t, r.df);
  return r;
}

}  // namespace itnet
