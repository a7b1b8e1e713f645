#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kbeta/diagnostics.hpp"
#include "kbeta/optimizer.hpp"
#include "kbeta/schedules.hpp"
#include "kbeta/stats.hpp"
#include "kbeta/tensor.hpp"

namespace kbeta {

enum class Precision { f32, f64 };
std::string to_string(Precision p);
Precision parse_precision(std::string_view text);

/// Either optimizer, tagged with the label used in reports and output paths.
/// The learning rate inside the configs is replaced by the run's resolved rate.
struct OptimizerSpec {
  std::string label;
  bool is_adam = false;
  KbetaConfig kbeta;
  AdamConfig adam;

  double lr() const { return is_adam ? adam.lr : kbeta.lr; }
  void set_lr(double lr);
  nlohmann::json to_json() const;
  static OptimizerSpec from_json(const nlohmann::json& j);
};

/// Presets: kbeta, kbeta_fixed, adam95, adam999. The toy testbeds run with bias
/// correction off, a single bucket and no options; rare_trigger uses beta2max
/// correction, 50 warmup steps and decay 0 for kbeta, and bias-corrected Adam.
OptimizerSpec optimizer_preset(std::string_view label, std::string_view testbed);

struct RunConfig {
  std::string testbed = "rare_trigger";
  nlohmann::json testbed_overrides = nlohmann::json::object();
  OptimizerSpec optimizer;
  std::uint64_t seed = 0;
  std::optional<std::int64_t> steps;           // testbed default when unset
  std::optional<std::int64_t> untimed_steps;   // testbed default when unset
  std::optional<double> lr;                    // testbed default when unset
  std::optional<PiecewiseSchedule> lr_schedule;  // ticks are steps; overrides the optimizer lr
  std::int64_t eval_every = 0;                 // 0: initial and final evaluation only
  Precision precision = Precision::f64;
  bool diagnostics = false;
  bool check_second_moment_bound = false;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

struct EvalPoint {
  std::int64_t step = 0;
  double loss = 0.0;
  std::optional<double> accuracy;

  friend bool operator==(const EvalPoint&, const EvalPoint&) = default;
};

/// Running check of v_{t+1} <= v_1 b^t + (1 - b_min) G^2 (1 - b^t) / (1 - b),
/// b = beta2_max, G = running max of the pooled gradient norm.
struct SecondMomentBound {
  std::int64_t checked_steps = 0;
  std::int64_t violations = 0;
  std::int64_t first_violation_step = 0;
  double max_ratio = 0.0;  // max over steps and coordinates of v / bound
  double max_grad_norm = 0.0;

  friend bool operator==(const SecondMomentBound&, const SecondMomentBound&) = default;
};

struct RunReport {
  std::string testbed;
  std::string optimizer;
  std::uint64_t seed = 0;
  nlohmann::json config;  // resolved run config, including the testbed config
  std::string config_hash;
  std::string precision;
  std::int64_t steps = 0;
  std::vector<EvalPoint> series;
  double final_loss = 0.0;
  std::optional<double> final_accuracy;
  double wall_seconds = 0.0;
  bool diverged = false;
  std::int64_t last_finite_step = 0;
  std::string param_digest;  // FNV-1a over the final parameter bytes
  std::optional<SecondMomentBound> bound;

  // In-memory only.
  ParamTree<double> final_params;
  std::vector<SunspikeRecord> diagnostics;

  nlohmann::json to_json() const;
  static RunReport from_json(const nlohmann::json& j);
};

RunReport run_experiment(const RunConfig& cfg);

struct PairedComparison {
  std::string baseline;
  std::string candidate;
  std::vector<std::uint64_t> seeds;
  std::vector<double> log10_diffs;  // log10(baseline) - log10(candidate); positive favours candidate
  std::int64_t wins = 0;
  std::optional<stats::TestResult> paired_t;
  std::optional<stats::TestResult> wilcoxon;
  std::optional<stats::TestResult> sign;
  std::optional<stats::TestResult> geo_mean;
  std::optional<double> holm_paired_t;
  std::optional<double> holm_wilcoxon;
  std::vector<std::string> notices;

  nlohmann::json to_json() const;
};

struct SweepReport {
  std::vector<RunReport> runs;
  std::vector<PairedComparison> comparisons;
  std::optional<double> tau;
  std::map<std::string, std::int64_t> successes;  // final loss <= tau
  std::vector<std::string> notices;

  const RunReport& run(const std::string& optimizer, std::uint64_t seed) const;
  nlohmann::json to_json() const;
};

struct SweepConfig {
  RunConfig base;  // optimizer and seed are overwritten per cell
  std::vector<std::uint64_t> seeds;
  std::vector<OptimizerSpec> optimizers;  // the first one is the candidate
  std::optional<double> tau;
  unsigned threads = 0;  // 0: hardware concurrency
};

/// Every (seed, optimizer) cell; all optimizers see the same data stream per seed.
SweepReport seed_sweep(const SweepConfig& cfg);

void write_sweep_csv(std::ostream& os, const SweepReport& report);

struct EquivalenceResult {
  double bc_off = 0.0;  // Adam without correction vs kbeta with bias_correction none
  double bc_on = 0.0;   // Adam with correction vs kbeta with bias_correction beta2max
  double max() const { return std::max(bc_off, bc_on); }
};

/// Runs Adam and the equal-bounds dynamic optimizer in lockstep on sanity1 and
/// returns the largest |theta_adam - theta_kbeta| seen over all steps.
EquivalenceResult equivalence_check(std::int64_t steps, Precision precision,
                                    std::uint64_t seed = 0,
                                    const nlohmann::json& testbed_overrides = nlohmann::json::object());

std::string fnv1a_hex(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ull);

}  // namespace kbeta
