#include "kbeta/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "kbeta/error.hpp"

namespace kbeta::stats {

namespace {

// Continued fraction for I_x(a,b), modified Lentz.
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  return h;
}

std::vector<double> finite_copy(std::span<const double> xs, const char* who) {
  std::vector<double> out(xs.begin(), xs.end());
  for (double x : out) {
    if (!std::isfinite(x)) throw ConfigError(std::string(who) + ": non-finite input");
  }
  return out;
}

double mean_of(const std::vector<double>& xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double sample_sd(const std::vector<double>& xs, double mean) {
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

// Binomial(n, k) as an exact integer; n <= 62 keeps every coefficient in range.
std::uint64_t choose(std::int64_t n, std::int64_t k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  unsigned __int128 acc = 1;
  for (std::int64_t i = 1; i <= k; ++i) acc = acc * static_cast<unsigned>(n - k + i) / static_cast<unsigned>(i);
  return static_cast<std::uint64_t>(acc);
}

double log_choose(std::int64_t n, std::int64_t k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

double two_sided(double lower, double upper) { return std::min(1.0, 2.0 * std::min(lower, upper)); }

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw ConfigError("incomplete_beta: a, b must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double inverse_incomplete_beta(double a, double b, double p) {
  if (p <= 0.0) return 0.0;
  if (p >= 1.0) return 1.0;
  double lo = 0.0;
  double hi = 1.0;
  for (int i = 0; i < 200 && hi - lo > 1e-17; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (incomplete_beta(a, b, mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) throw ConfigError("student_t_cdf: df must be positive");
  const double x = df / (df + t * t);
  const double tail = 0.5 * incomplete_beta(0.5 * df, 0.5, x);
  return t > 0.0 ? 1.0 - tail : tail;
}

double student_t_quantile(double p, double df) {
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("student_t_quantile: p must lie in (0, 1)");
  if (p == 0.5) return 0.0;
  const double tail = std::min(p, 1.0 - p);
  const double x = inverse_incomplete_beta(0.5 * df, 0.5, 2.0 * tail);
  const double t = std::sqrt(df * (1.0 - x) / x);
  return p < 0.5 ? -t : t;
}

double binomial_half_lower_tail(std::int64_t k, std::int64_t n) {
  if (n < 0) throw ConfigError("binomial tail: n < 0");
  if (k < 0) return 0.0;
  if (k >= n) return 1.0;
  if (n <= 62) {
    std::uint64_t count = 0;
    for (std::int64_t i = 0; i <= k; ++i) count += choose(n, i);
    return std::ldexp(static_cast<double>(count), static_cast<int>(-n));
  }
  double acc = 0.0;
  for (std::int64_t i = 0; i <= k; ++i) acc += std::exp(log_choose(n, i) - n * std::log(2.0));
  return std::min(acc, 1.0);
}

double binomial_half_upper_tail(std::int64_t k, std::int64_t n) {
  // Symmetry of Binomial(n, 1/2): P(X >= k) = P(X <= n - k).
  return binomial_half_lower_tail(n - k, n);
}

EffectSizes effect_sizes(double t, std::int64_t n) {
  if (n < 2) throw ConfigError("effect_sizes: n must be >= 2");
  const double df = static_cast<double>(n - 1);
  return {t / std::sqrt(static_cast<double>(n)), std::sqrt(t * t / (t * t + df))};
}

TestResult paired_t(std::span<const double> diffs_in, double level) {
  const std::vector<double> diffs = finite_copy(diffs_in, "paired_t");
  if (diffs.size() < 2) throw ConfigError("paired_t: need at least 2 differences");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("paired_t: level must lie in (0, 1)");
  const auto n = static_cast<std::int64_t>(diffs.size());
  const double mean = mean_of(diffs);
  const double sd = sample_sd(diffs, mean);
  if (!(sd > 0.0)) throw DegenerateSampleError("degenerate sample: zero variance");
  const double se = sd / std::sqrt(static_cast<double>(n));
  const double t = mean / se;
  const double df = static_cast<double>(n - 1);

  TestResult out;
  out.test = "paired_t";
  out.n = n;
  out.statistic = t;
  out.df = df;
  out.estimate = mean;
  out.p_two_sided = std::min(1.0, incomplete_beta(0.5 * df, 0.5, df / (df + t * t)));
  const double q = student_t_quantile(0.5 + 0.5 * level, df);
  out.ci = ConfidenceInterval{mean - q * se, mean + q * se, level};
  const EffectSizes es = effect_sizes(t, n);
  out.d_z = es.d_z;
  out.r = es.r;
  return out;
}

namespace {

// Number of sign assignments per doubled rank-sum, for integer doubled ranks.
std::vector<std::uint64_t> signed_rank_counts(const std::vector<std::int64_t>& doubled_ranks) {
  const std::int64_t total = std::accumulate(doubled_ranks.begin(), doubled_ranks.end(), std::int64_t{0});
  std::vector<std::uint64_t> counts(static_cast<std::size_t>(total) + 1, 0);
  counts[0] = 1;
  std::int64_t reach = 0;
  for (std::int64_t r : doubled_ranks) {
    for (std::int64_t s = reach; s >= 0; --s) counts[s + r] += counts[s];
    reach += r;
  }
  return counts;
}

double signed_rank_p(const std::vector<std::int64_t>& doubled_ranks, std::int64_t doubled_w) {
  const auto n = static_cast<int>(doubled_ranks.size());
  const std::vector<std::uint64_t> counts = signed_rank_counts(doubled_ranks);
  long double lower = 0.0L;
  long double upper = 0.0L;
  for (std::size_t s = 0; s < counts.size(); ++s) {
    const auto ss = static_cast<std::int64_t>(s);
    if (ss <= doubled_w) lower += counts[s];
    if (ss >= doubled_w) upper += counts[s];
  }
  const long double total = std::ldexp(1.0L, n);
  return two_sided(static_cast<double>(lower / total), static_cast<double>(upper / total));
}

}  // namespace

double wilcoxon_exact_p(double w_plus, std::int64_t n) {
  if (n < 1 || n > kWilcoxonExactMaxN) {
    throw ConfigError("wilcoxon_exact_p: n out of exact range");
  }
  std::vector<std::int64_t> doubled(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) doubled[i] = 2 * (i + 1);
  return signed_rank_p(doubled, std::llround(2.0 * w_plus));
}

TestResult wilcoxon_exact(std::span<const double> diffs_in) {
  std::vector<double> diffs = finite_copy(diffs_in, "wilcoxon_exact");
  std::erase(diffs, 0.0);
  const auto n = static_cast<std::int64_t>(diffs.size());
  if (n == 0) throw DegenerateSampleError("degenerate sample: all differences are zero");
  if (n > kWilcoxonExactMaxN) {
    throw ConfigError("wilcoxon_exact: n = " + std::to_string(n) + " exceeds the exact limit of " +
                      std::to_string(kWilcoxonExactMaxN) +
                      "; use a large-sample normal approximation instead");
  }
  std::vector<std::size_t> order(diffs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return std::abs(diffs[a]) < std::abs(diffs[b]); });
  // Doubled midranks stay integral: tie group at positions [i, j) gets i + j + 1.
  std::vector<std::int64_t> doubled(diffs.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && std::abs(diffs[order[j]]) == std::abs(diffs[order[i]])) ++j;
    const auto mid2 = static_cast<std::int64_t>(i + j + 1);
    for (std::size_t k = i; k < j; ++k) doubled[order[k]] = mid2;
    i = j;
  }
  std::int64_t w2 = 0;
  for (std::size_t i = 0; i < diffs.size(); ++i) {
    if (diffs[i] > 0.0) w2 += doubled[i];
  }
  TestResult out;
  out.test = "wilcoxon_exact";
  out.n = n;
  out.statistic = static_cast<double>(w2) / 2.0;
  out.p_two_sided = signed_rank_p(doubled, w2);
  return out;
}

TestResult sign_test(std::int64_t wins, std::int64_t n) {
  if (n < 0 || wins < 0 || wins > n) throw ConfigError("sign_test: need 0 <= wins <= n");
  TestResult out;
  out.test = "sign_test";
  out.n = n;
  out.statistic = static_cast<double>(wins);
  out.p_two_sided = n == 0 ? 1.0
                           : two_sided(binomial_half_lower_tail(wins, n),
                                       binomial_half_upper_tail(wins, n));
  return out;
}

TestResult mcnemar_exact(std::int64_t b, std::int64_t c) {
  if (b < 0 || c < 0) throw ConfigError("mcnemar_exact: counts must be non-negative");
  if (b + c == 0) throw DegenerateSampleError("mcnemar_exact: no discordant pairs");
  TestResult out = sign_test(b, b + c);
  out.test = "mcnemar_exact";
  return out;
}

ConfidenceInterval clopper_pearson(std::int64_t k, std::int64_t n, double level) {
  if (n < 1 || k < 0 || k > n) throw ConfigError("clopper_pearson: need 0 <= k <= n, n >= 1");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("clopper_pearson: level must lie in (0, 1)");
  const double alpha = 1.0 - level;
  const auto kd = static_cast<double>(k);
  const auto nd = static_cast<double>(n);
  ConfidenceInterval ci;
  ci.level = level;
  ci.lo = k == 0 ? 0.0 : inverse_incomplete_beta(kd, nd - kd + 1.0, 0.5 * alpha);
  ci.hi = k == n ? 1.0 : inverse_incomplete_beta(kd + 1.0, nd - kd, 1.0 - 0.5 * alpha);
  return ci;
}

TestResult geo_mean_ratio(std::span<const double> baseline, std::span<const double> candidate,
                          double level) {
  if (baseline.size() != candidate.size()) throw ConfigError("geo_mean_ratio: length mismatch");
  if (baseline.size() < 2) throw ConfigError("geo_mean_ratio: need at least 2 pairs");
  std::vector<double> logs;
  logs.reserve(baseline.size());
  for (std::size_t i = 0; i < baseline.size(); ++i) {
    if (!(baseline[i] > 0.0 && candidate[i] > 0.0) || !std::isfinite(baseline[i]) ||
        !std::isfinite(candidate[i])) {
      throw ConfigError("geo_mean_ratio: losses must be positive and finite");
    }
    logs.push_back(std::log10(baseline[i] / candidate[i]));
  }
  const double mean = mean_of(logs);
  const double ratio = std::pow(10.0, mean);
  const double sd = sample_sd(logs, mean);
  TestResult out;
  out.test = "geo_mean_ratio";
  out.n = static_cast<std::int64_t>(logs.size());
  out.estimate = ratio;
  out.statistic = ratio;
  if (!(sd > 0.0)) {
    out.degenerate = true;
    out.ci = ConfidenceInterval{ratio, ratio, level};
    out.p_two_sided = mean == 0.0 ? 1.0 : 0.0;
    return out;
  }
  const TestResult t = paired_t(logs, level);
  out.df = t.df;
  out.p_two_sided = t.p_two_sided;
  out.ci = ConfidenceInterval{std::pow(10.0, t.ci->lo), std::pow(10.0, t.ci->hi), level};
  return out;
}

std::vector<double> holm_adjust(std::span<const double> pvals) {
  const std::size_t m = pvals.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pvals[a] < pvals[b]; });
  std::vector<double> adjusted(m);
  double running = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double p = pvals[order[i]];
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("holm_adjust: p-values must lie in [0, 1]");
    running = std::max(running, std::min(1.0, static_cast<double>(m - i) * p));
    adjusted[order[i]] = running;
  }
  return adjusted;
}

nlohmann::json to_json(const TestResult& result) {
  nlohmann::json j{{"test", result.test},
                   {"n", result.n},
                   {"statistic", result.statistic},
                   {"p_two_sided", result.p_two_sided},
                   {"degenerate", result.degenerate}};
  if (result.df) j["df"] = *result.df;
  if (result.estimate) j["estimate"] = *result.estimate;
  if (result.ci) j["ci"] = {{"lo", result.ci->lo}, {"hi", result.ci->hi}, {"level", result.ci->level}};
  if (result.d_z) j["d_z"] = *result.d_z;
  if (result.r) j["r"] = *result.r;
  return j;
}

TestResult test_result_from_json(const nlohmann::json& j) {
  TestResult r;
  r.test = j.at("test").get<std::string>();
  r.n = j.at("n").get<std::int64_t>();
  r.statistic = j.at("statistic").get<double>();
  r.p_two_sided = j.at("p_two_sided").get<double>();
  r.degenerate = j.value("degenerate", false);
  if (j.contains("df")) r.df = j.at("df").get<double>();
  if (j.contains("estimate")) r.estimate = j.at("estimate").get<double>();
  if (j.contains("ci")) {
    const auto& c = j.at("ci");
    r.ci = ConfidenceInterval{c.at("lo").get<double>(), c.at("hi").get<double>(),
                              c.at("level").get<double>()};
  }
  if (j.contains("d_z")) r.d_z = j.at("d_z").get<double>();
  if (j.contains("r")) r.r = j.at("r").get<double>();
  return r;
}

}  // namespace kbeta::stats
