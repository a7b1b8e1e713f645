#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace kbeta::stats {

struct ConfidenceInterval {
  double lo = 0.0;
  double hi = 0.0;
  double level = 0.95;
};

/// Outcome of a paired test. `estimate` is the mean difference for t-tests and
/// the multiplicative ratio for geo_mean_ratio.
struct TestResult {
  std::string test;
  std::int64_t n = 0;
  double statistic = 0.0;
  double p_two_sided = 1.0;
  std::optional<double> df;
  std::optional<double> estimate;
  std::optional<ConfidenceInterval> ci;
  std::optional<double> d_z;
  std::optional<double> r;
  bool degenerate = false;
};

nlohmann::json to_json(const TestResult& result);
TestResult test_result_from_json(const nlohmann::json& j);

// -- special functions ----------------------------------------------------------

/// Regularized incomplete beta I_x(a, b) via Lentz's continued fraction (~1e-14 relative).
double incomplete_beta(double a, double b, double x);
/// x such that I_x(a, b) = p, by bisection on incomplete_beta.
double inverse_incomplete_beta(double a, double b, double p);
double student_t_cdf(double t, double df);
double student_t_quantile(double p, double df);
/// P(X <= k) and P(X >= k) for X ~ Binomial(n, 1/2); exact integer counts for n <= 62.
double binomial_half_lower_tail(std::int64_t k, std::int64_t n);
double binomial_half_upper_tail(std::int64_t k, std::int64_t n);

// -- tests ------------------------------------------------------------------------

/// Largest sample size handled by exact enumeration of the signed-rank distribution.
inline constexpr std::int64_t kWilcoxonExactMaxN = 60;

/// Paired t on differences; CI on the mean, d_z = t/sqrt(n), r = sqrt(t^2/(t^2+df)).
TestResult paired_t(std::span<const double> diffs, double level = 0.95);

/// Exact two-sided signed-rank test. Zeros are dropped, ties get midranks.
TestResult wilcoxon_exact(std::span<const double> diffs);
/// Exact two-sided p for a signed-rank sum `w_plus` over ranks 1..n (no ties).
double wilcoxon_exact_p(double w_plus, std::int64_t n);

TestResult sign_test(std::int64_t wins, std::int64_t n);
TestResult mcnemar_exact(std::int64_t b, std::int64_t c);
ConfidenceInterval clopper_pearson(std::int64_t k, std::int64_t n, double level = 0.95);

/// 10^mean(log10(baseline/candidate)) with a back-transformed t-interval.
TestResult geo_mean_ratio(std::span<const double> baseline, std::span<const double> candidate,
                          double level = 0.95);

std::vector<double> holm_adjust(std::span<const double> pvals);

struct EffectSizes {
  double d_z = 0.0;
  double r = 0.0;
};
EffectSizes effect_sizes(double t, std::int64_t n);

}  // namespace kbeta::stats
