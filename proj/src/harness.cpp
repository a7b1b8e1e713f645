#include "kbeta/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <memory>
#include <mutex>
#include <ostream>
#include <set>
#include <thread>

#include "kbeta/checkpoint.hpp"
#include "kbeta/testbeds.hpp"

namespace kbeta {

std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(std::string_view text) {
  if (text == "f32" || text == "float32" || text == "32") return Precision::f32;
  if (text == "f64" || text == "float64" || text == "64") return Precision::f64;
  throw ConfigError("unknown precision '" + std::string(text) + "'");
}

std::string fnv1a_hex(const void* data, std::size_t size, std::uint64_t h) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// -- optimizer specs ------------------------------------------------------------------

void OptimizerSpec::set_lr(double lr) {
  if (is_adam) {
    adam.lr = lr;
  } else {
    kbeta.lr = lr;
  }
}

nlohmann::json OptimizerSpec::to_json() const {
  return {{"label", label},
          {"kind", is_adam ? "adam" : "kbeta"},
          {"config", is_adam ? config_to_json(adam) : config_to_json(kbeta)}};
}

OptimizerSpec OptimizerSpec::from_json(const nlohmann::json& j) {
  OptimizerSpec s;
  s.label = j.at("label").get<std::string>();
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "adam") {
    s.is_adam = true;
    s.adam = adam_config_from_json(j.at("config"));
    s.adam.validate();
  } else if (kind == "kbeta") {
    s.kbeta = config_from_json(j.at("config"));
    s.kbeta.validate();
  } else {
    throw ConfigError("optimizer kind must be kbeta or adam");
  }
  return s;
}

OptimizerSpec optimizer_preset(std::string_view label, std::string_view testbed) {
  const bool toy = testbed != "rare_trigger";
  OptimizerSpec s;
  s.label = std::string(label);
  if (label == "kbeta" || label == "kbeta_fixed") {
    s.kbeta.bucket_mode = BucketMode::global;
    if (toy) {
      s.kbeta.bias_correction = BiasCorrection::none;
    } else {
      s.kbeta.bias_correction = BiasCorrection::beta2max;
      s.kbeta.warmup_steps = 50;
      s.kbeta.decay = 0.0;
    }
    if (label == "kbeta_fixed") s.kbeta.beta2_min = s.kbeta.beta2_max;
  } else if (label == "adam95" || label == "adam999") {
    s.is_adam = true;
    s.adam.beta2 = label == "adam95" ? 0.95 : 0.999;
    s.adam.bias_correction = !toy;
  } else {
    throw ConfigError("unknown optimizer preset '" + std::string(label) + "'");
  }
  return s;
}

namespace {

nlohmann::json opt_to_json(const std::optional<double>& x) { return x ? nlohmann::json(*x) : nlohmann::json(); }

std::optional<double> opt_from_json(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

// -- run config ---------------------------------------------------------------------

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j{{"testbed", testbed},
                   {"testbed_overrides", testbed_overrides},
                   {"optimizer", optimizer.to_json()},
                   {"seed", seed},
                   {"steps", nullptr},
                   {"untimed_steps", nullptr},
                   {"lr", nullptr},
                   {"lr_schedule", nullptr},
                   {"eval_every", eval_every},
                   {"precision", to_string(precision)},
                   {"diagnostics", diagnostics},
                   {"check_second_moment_bound", check_second_moment_bound}};
  if (steps) j["steps"] = *steps;
  if (untimed_steps) j["untimed_steps"] = *untimed_steps;
  if (lr) j["lr"] = *lr;
  if (lr_schedule) j["lr_schedule"] = format_schedule(*lr_schedule);
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  c.testbed = j.at("testbed").get<std::string>();
  c.testbed_overrides = j.value("testbed_overrides", nlohmann::json::object());
  c.optimizer = OptimizerSpec::from_json(j.at("optimizer"));
  c.seed = j.value("seed", c.seed);
  if (j.contains("steps") && !j.at("steps").is_null()) c.steps = j.at("steps").get<std::int64_t>();
  if (j.contains("untimed_steps") && !j.at("untimed_steps").is_null()) {
    c.untimed_steps = j.at("untimed_steps").get<std::int64_t>();
  }
  c.lr = opt_from_json(j, "lr");
  if (j.contains("lr_schedule") && !j.at("lr_schedule").is_null()) {
    c.lr_schedule = parse_schedule(j.at("lr_schedule").get<std::string>());
  }
  c.eval_every = j.value("eval_every", c.eval_every);
  c.precision = parse_precision(j.value("precision", std::string("f64")));
  c.diagnostics = j.value("diagnostics", c.diagnostics);
  c.check_second_moment_bound = j.value("check_second_moment_bound", c.check_second_moment_bound);
  return c;
}

// -- reports ------------------------------------------------------------------------

nlohmann::json RunReport::to_json() const {
  nlohmann::json series_j = nlohmann::json::array();
  for (const auto& p : series) {
    series_j.push_back({{"step", p.step}, {"loss", p.loss}, {"accuracy", opt_to_json(p.accuracy)}});
  }
  nlohmann::json j{{"testbed", testbed},
                   {"optimizer", optimizer},
                   {"seed", seed},
                   {"config", config},
                   {"config_hash", config_hash},
                   {"precision", precision},
                   {"steps", steps},
                   {"series", std::move(series_j)},
                   {"final_loss", final_loss},
                   {"final_accuracy", opt_to_json(final_accuracy)},
                   {"wall_seconds", wall_seconds},
                   {"diverged", diverged},
                   {"last_finite_step", last_finite_step},
                   {"param_digest", param_digest},
                   {"second_moment_bound", nullptr}};
  if (bound) {
    j["second_moment_bound"] = {{"checked_steps", bound->checked_steps},
                                {"violations", bound->violations},
                                {"first_violation_step", bound->first_violation_step},
                                {"max_ratio", bound->max_ratio},
                                {"max_grad_norm", bound->max_grad_norm}};
  }
  return j;
}

RunReport RunReport::from_json(const nlohmann::json& j) {
  RunReport r;
  r.testbed = j.at("testbed").get<std::string>();
  r.optimizer = j.at("optimizer").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config = j.at("config");
  r.config_hash = j.at("config_hash").get<std::string>();
  r.precision = j.at("precision").get<std::string>();
  r.steps = j.at("steps").get<std::int64_t>();
  for (const auto& p : j.at("series")) {
    r.series.push_back({p.at("step").get<std::int64_t>(), p.at("loss").get<double>(),
                        opt_from_json(p, "accuracy")});
  }
  r.final_loss = opt_from_json(j, "final_loss").value_or(std::numeric_limits<double>::quiet_NaN());
  r.final_accuracy = opt_from_json(j, "final_accuracy");
  r.wall_seconds = j.at("wall_seconds").get<double>();
  r.diverged = j.at("diverged").get<bool>();
  r.last_finite_step = j.at("last_finite_step").get<std::int64_t>();
  r.param_digest = j.at("param_digest").get<std::string>();
  if (j.contains("second_moment_bound") && !j.at("second_moment_bound").is_null()) {
    const auto& b = j.at("second_moment_bound");
    r.bound = SecondMomentBound{b.at("checked_steps").get<std::int64_t>(),
                                b.at("violations").get<std::int64_t>(),
                                b.at("first_violation_step").get<std::int64_t>(),
                                b.at("max_ratio").get<double>(),
                                b.at("max_grad_norm").get<double>()};
  }
  return r;
}

// -- single run -----------------------------------------------------------------------

namespace {

template <class Real>
class BoundMonitor {
 public:
  BoundMonitor(double beta2_min, double beta2_max) : b_min_(beta2_min), b_max_(beta2_max) {}

  void observe(const Optimizer<Real>& opt, const ParamTree<Real>& grads, std::int64_t t) {
    summary_.max_grad_norm = std::max(summary_.max_grad_norm, pooled_l2_norm(grads));
    if (t == 1) {
      for (const auto& [path, _] : grads) {
        const Tensor<Real>& v = opt.second_moment(path);
        v1_.insert(v1_.end(), v.begin(), v.end());
      }
      return;
    }
    // v_t against the bound with exponent t - 1.
    pow_ *= b_max_;
    const double g2 = summary_.max_grad_norm * summary_.max_grad_norm;
    const double tail = (1.0 - b_min_) * g2 * (1.0 - pow_) / (1.0 - b_max_);
    std::size_t k = 0;
    bool violated = false;
    for (const auto& [path, _] : grads) {
      for (Real x : opt.second_moment(path)) {
        const double v = static_cast<double>(x);
        const double bound = v1_[k++] * pow_ + tail;
        if (v > bound * (1.0 + 1e-9)) violated = true;
        if (bound > 0.0) summary_.max_ratio = std::max(summary_.max_ratio, v / bound);
      }
    }
    ++summary_.checked_steps;
    if (violated) {
      if (summary_.violations == 0) summary_.first_violation_step = t;
      ++summary_.violations;
    }
  }

  const SecondMomentBound& summary() const { return summary_; }

 private:
  double b_min_;
  double b_max_;
  double pow_ = 1.0;
  std::vector<double> v1_;
  SecondMomentBound summary_;
};

template <class Real>
std::unique_ptr<Optimizer<Real>> make_optimizer(const OptimizerSpec& spec, const ParamTree<Real>& params,
                                                bool diagnostics) {
  if (spec.is_adam) return std::make_unique<AdamOptimizer<Real>>(spec.adam, params);
  KbetaConfig cfg = spec.kbeta;
  cfg.diagnostics = diagnostics;
  return std::make_unique<KbetaOptimizer<Real>>(cfg, params);
}

template <class Real>
std::string digest(const ParamTree<Real>& params) {
  std::string bytes;
  for (const auto& [path, t] : params) {
    bytes += path;
    bytes.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(Real));
  }
  return fnv1a_hex(bytes.data(), bytes.size());
}

template <class Real>
ParamTree<double> to_double(const ParamTree<Real>& params) {
  ParamTree<double> out;
  for (const auto& [path, t] : params) {
    out.emplace(path, Tensor<double>(t.shape(), std::vector<double>(t.begin(), t.end())));
  }
  return out;
}

template <class Real>
RunReport run_impl(const RunConfig& cfg) {
  using clock = std::chrono::steady_clock;
  auto testbed = make_testbed<Real>(cfg.testbed, cfg.seed, cfg.testbed_overrides);
  const std::int64_t steps = cfg.steps.value_or(testbed->default_steps());
  if (steps < 0) throw ConfigError("steps must be >= 0");
  const std::int64_t untimed = std::min(cfg.untimed_steps.value_or(testbed->default_untimed_steps()), steps);
  if (untimed < 0) throw ConfigError("untimed steps must be >= 0");
  if (cfg.eval_every < 0) throw ConfigError("eval_every must be >= 0");
  if (cfg.lr_schedule && steps > 0) lr_at(*cfg.lr_schedule, 1);
  const double base_lr = cfg.lr.value_or(testbed->default_lr());
  if (!(base_lr > 0.0)) throw ConfigError("lr must be positive");
  OptimizerSpec spec = cfg.optimizer;
  spec.set_lr(base_lr);

  RunReport report;
  report.testbed = cfg.testbed;
  report.optimizer = cfg.optimizer.label;
  report.seed = cfg.seed;
  report.precision = to_string(cfg.precision);
  report.steps = steps;
  nlohmann::json resolved = cfg.to_json();
  resolved["optimizer"] = spec.to_json();
  resolved["lr"] = base_lr;
  resolved["steps"] = steps;
  resolved["untimed_steps"] = untimed;
  resolved["testbed_config"] = testbed->config_json();
  report.config = resolved;
  const std::string dumped = resolved.dump();
  report.config_hash = fnv1a_hex(dumped.data(), dumped.size());

  ParamTree<Real> params = testbed->init_params();
  auto opt = make_optimizer(spec, params, cfg.diagnostics);
  std::optional<BoundMonitor<Real>> monitor;
  if (cfg.check_second_moment_bound) {
    const auto [lo, hi] = opt->beta2_range();
    monitor.emplace(lo, hi);
  }

  auto record_eval = [&](std::int64_t t) {
    const Evaluation e = testbed->evaluate(params);
    if (!std::isfinite(e.loss)) return false;
    report.series.push_back({t, e.loss, e.accuracy});
    return true;
  };

  record_eval(0);
  ParamTree<Real> grads;
  clock::time_point start = clock::now();
  for (std::int64_t t = 1; t <= steps; ++t) {
    if (t == untimed + 1) start = clock::now();
    const double lr = cfg.lr_schedule ? lr_at(*cfg.lr_schedule, t) : base_lr;
    const double loss = testbed->loss_and_grad(params, t, grads);
    if (!std::isfinite(loss)) {
      report.diverged = true;
      break;
    }
    try {
      opt->step(grads, params, lr);
    } catch (const NonFiniteError&) {
      report.diverged = true;
      break;
    }
    report.last_finite_step = t;
    if (monitor) monitor->observe(*opt, grads, t);
    const bool due = t == steps || (cfg.eval_every > 0 && t % cfg.eval_every == 0);
    if (due && !record_eval(t)) {
      report.diverged = true;
      break;
    }
  }
  if (untimed >= steps) start = clock::now();
  report.wall_seconds = std::chrono::duration<double>(clock::now() - start).count();

  if (report.series.empty()) report.diverged = true;
  if (report.diverged) {
    report.final_loss = std::numeric_limits<double>::quiet_NaN();
  } else {
    report.final_loss = report.series.back().loss;
    report.final_accuracy = report.series.back().accuracy;
  }
  report.param_digest = digest(params);
  report.final_params = to_double(params);
  report.diagnostics = opt->take_history();
  if (monitor) report.bound = monitor->summary();
  return report;
}

}  // namespace

RunReport run_experiment(const RunConfig& cfg) {
  return cfg.precision == Precision::f32 ? run_impl<float>(cfg) : run_impl<double>(cfg);
}

// -- sweeps ---------------------------------------------------------------------------

nlohmann::json PairedComparison::to_json() const {
  nlohmann::json j{{"baseline", baseline},
                   {"candidate", candidate},
                   {"seeds", seeds},
                   {"log10_diffs", log10_diffs},
                   {"wins", wins},
                   {"notices", notices}};
  if (paired_t) j["paired_t"] = stats::to_json(*paired_t);
  if (wilcoxon) j["wilcoxon"] = stats::to_json(*wilcoxon);
  if (sign) j["sign_test"] = stats::to_json(*sign);
  if (geo_mean) j["geo_mean_ratio"] = stats::to_json(*geo_mean);
  if (holm_paired_t) j["holm_paired_t"] = *holm_paired_t;
  if (holm_wilcoxon) j["holm_wilcoxon"] = *holm_wilcoxon;
  return j;
}

const RunReport& SweepReport::run(const std::string& optimizer, std::uint64_t seed) const {
  for (const auto& r : runs) {
    if (r.optimizer == optimizer && r.seed == seed) return r;
  }
  throw ConfigError("sweep has no run for " + optimizer + " seed " + std::to_string(seed));
}

nlohmann::json SweepReport::to_json() const {
  nlohmann::json runs_j = nlohmann::json::array();
  for (const auto& r : runs) runs_j.push_back(r.to_json());
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : comparisons) comps.push_back(c.to_json());
  return {{"runs", std::move(runs_j)},
          {"comparisons", std::move(comps)},
          {"tau", opt_to_json(tau)},
          {"successes", successes},
          {"notices", notices}};
}

namespace {

PairedComparison compare(const SweepReport& report, const std::vector<std::uint64_t>& seeds,
                         const std::string& baseline, const std::string& candidate) {
  PairedComparison c;
  c.baseline = baseline;
  c.candidate = candidate;
  std::vector<double> base_losses;
  std::vector<double> cand_losses;
  for (std::uint64_t seed : seeds) {
    const RunReport& b = report.run(baseline, seed);
    const RunReport& k = report.run(candidate, seed);
    if (b.diverged || k.diverged || !(b.final_loss > 0.0) || !(k.final_loss > 0.0)) {
      c.notices.push_back("seed " + std::to_string(seed) + " excluded: diverged or non-positive loss");
      continue;
    }
    c.seeds.push_back(seed);
    base_losses.push_back(b.final_loss);
    cand_losses.push_back(k.final_loss);
    const double diff = std::log10(b.final_loss) - std::log10(k.final_loss);
    c.log10_diffs.push_back(diff);
    if (diff > 0.0) ++c.wins;
  }
  if (c.log10_diffs.size() < 2) {
    c.notices.push_back("stats skipped: fewer than 2 paired seeds");
    return c;
  }
  auto attempt = [&](const char* name, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      c.notices.push_back(std::string(name) + ": " + e.what());
    }
  };
  attempt("paired_t", [&] { c.paired_t = stats::paired_t(c.log10_diffs); });
  attempt("wilcoxon", [&] { c.wilcoxon = stats::wilcoxon_exact(c.log10_diffs); });
  const auto nonzero = static_cast<std::int64_t>(
      std::count_if(c.log10_diffs.begin(), c.log10_diffs.end(), [](double d) { return d != 0.0; }));
  if (nonzero > 0) {
    c.sign = stats::sign_test(c.wins, nonzero);
  } else {
    c.notices.push_back("sign_test: degenerate sample: all differences are zero");
  }
  attempt("geo_mean_ratio", [&] {
    c.geo_mean = stats::geo_mean_ratio(base_losses, cand_losses);
    if (c.geo_mean->degenerate) c.notices.push_back("geo_mean_ratio: degenerate sample, zero spread");
  });
  return c;
}

void apply_holm(std::vector<PairedComparison>& comps, std::optional<stats::TestResult> PairedComparison::*test,
                std::optional<double> PairedComparison::*slot) {
  std::vector<double> ps;
  std::vector<PairedComparison*> owners;
  for (auto& c : comps) {
    if (c.*test) {
      ps.push_back((c.*test)->p_two_sided);
      owners.push_back(&c);
    }
  }
  const std::vector<double> adj = stats::holm_adjust(ps);
  for (std::size_t i = 0; i < adj.size(); ++i) owners[i]->*slot = adj[i];
}

}  // namespace

SweepReport seed_sweep(const SweepConfig& cfg) {
  if (cfg.seeds.empty()) throw ConfigError("seed sweep: need at least one seed");
  if (cfg.optimizers.empty()) throw ConfigError("seed sweep: need at least one optimizer");
  if (std::set<std::uint64_t>(cfg.seeds.begin(), cfg.seeds.end()).size() != cfg.seeds.size()) {
    throw ConfigError("seed sweep: duplicate seeds");
  }
  std::set<std::string> labels;
  for (const auto& o : cfg.optimizers) {
    if (!labels.insert(o.label).second) throw ConfigError("seed sweep: duplicate optimizer label " + o.label);
  }

  const std::size_t cells = cfg.seeds.size() * cfg.optimizers.size();
  SweepReport report;
  report.runs.resize(cells);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells; i = next++) {
      RunConfig run = cfg.base;
      run.seed = cfg.seeds[i / cfg.optimizers.size()];
      run.optimizer = cfg.optimizers[i % cfg.optimizers.size()];
      try {
        report.runs[i] = run_experiment(run);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  unsigned threads = cfg.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : cfg.threads;
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, cells));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);

  report.tau = cfg.tau;
  if (cfg.tau) {
    for (const auto& o : cfg.optimizers) report.successes[o.label] = 0;
    for (const auto& r : report.runs) {
      if (!r.diverged && r.final_loss <= *cfg.tau) ++report.successes[r.optimizer];
    }
  }
  if (cfg.seeds.size() < 2) report.notices.push_back("stats skipped: a single seed gives no paired sample");
  if (cfg.optimizers.size() < 2) report.notices.push_back("stats skipped: need at least two optimizers");
  if (cfg.seeds.size() >= 2) {
    for (std::size_t k = 1; k < cfg.optimizers.size(); ++k) {
      report.comparisons.push_back(
          compare(report, cfg.seeds, cfg.optimizers[k].label, cfg.optimizers[0].label));
    }
    apply_holm(report.comparisons, &PairedComparison::paired_t, &PairedComparison::holm_paired_t);
    apply_holm(report.comparisons, &PairedComparison::wilcoxon, &PairedComparison::holm_wilcoxon);
  }
  return report;
}

void write_sweep_csv(std::ostream& os, const SweepReport& report) {
  os << "testbed,optimizer,seed,final_loss,final_accuracy,wall_seconds,diverged,steps,param_digest\n";
  auto num = [](double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
  };
  for (const auto& r : report.runs) {
    os << r.testbed << ',' << r.optimizer << ',' << r.seed << ',' << num(r.final_loss) << ','
       << (r.final_accuracy ? num(*r.final_accuracy) : "") << ',' << num(r.wall_seconds) << ','
       << (r.diverged ? 1 : 0) << ',' << r.steps << ',' << r.param_digest << '\n';
  }
}

// -- equivalence control ----------------------------------------------------------------

namespace {

template <class Real>
double lockstep(std::int64_t steps, bool bias_correction, std::uint64_t seed,
                const nlohmann::json& overrides) {
  auto testbed = make_testbed<Real>("sanity1", seed, overrides);
  const double lr = testbed->default_lr();
  AdamConfig adam_cfg;
  adam_cfg.lr = lr;
  adam_cfg.bias_correction = bias_correction;
  KbetaConfig k_cfg = adam_equivalent_config(adam_cfg.beta2, bias_correction);
  k_cfg.lr = lr;

  ParamTree<Real> pa = testbed->init_params();
  ParamTree<Real> pk = pa;
  AdamOptimizer<Real> adam(adam_cfg, pa);
  KbetaOptimizer<Real> kbeta(k_cfg, pk);
  ParamTree<Real> ga;
  ParamTree<Real> gk;
  double worst = 0.0;
  for (std::int64_t t = 1; t <= steps; ++t) {
    testbed->loss_and_grad(pa, t, ga);
    testbed->loss_and_grad(pk, t, gk);
    adam.step(ga, pa, lr);
    kbeta.step(gk, pk, lr);
    worst = std::max(worst, max_abs_diff(pa, pk));
  }
  return worst;
}

}  // namespace

EquivalenceResult equivalence_check(std::int64_t steps, Precision precision, std::uint64_t seed,
                                    const nlohmann::json& testbed_overrides) {
  if (steps < 1) throw ConfigError("equivalence_check: steps must be >= 1");
  EquivalenceResult r;
  if (precision == Precision::f32) {
    r.bc_off = lockstep<float>(steps, false, seed, testbed_overrides);
    r.bc_on = lockstep<float>(steps, true, seed, testbed_overrides);
  } else {
    r.bc_off = lockstep<double>(steps, false, seed, testbed_overrides);
    r.bc_on = lockstep<double>(steps, true, seed, testbed_overrides);
  }
  return r;
}

}  // namespace kbeta
