#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kbeta/diagnostics.hpp"
#include "kbeta/error.hpp"
#include "kbeta/tensor.hpp"

namespace kbeta {

enum class BiasCorrection { none, beta2max, exact };
enum class BucketMode { global, per_path, shape };

std::string to_string(BiasCorrection mode);
std::string to_string(BucketMode mode);
BiasCorrection parse_bias_correction(std::string_view text);
/// Accepts the CLI aliases: "per-array", "per-parameter", "per_path", "param_path".
BucketMode parse_bucket_mode(std::string_view text);

/// Hyperparameters and option switches of the dynamic-beta2 optimizer.
/// Defaults are the values used for the desk-scale testbeds.
struct KbetaConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2_min = 0.88;
  double beta2_max = 0.999;
  double alpha = 0.93;  // EMA coefficient of the pooled gradient norm
  double eps = 1e-8;
  double tiny_spike = 1e-9;
  double tiny_denom = 1e-8;
  /// nullopt: no AMSGrad; 1: hard; (0,1): leaky; 0: degenerate (buffer kept, vhat = v).
  std::optional<double> decay;
  /// Elementwise trust region |dtheta| <= lr * max_ratio. Setting it allocates v_max.
  std::optional<double> max_ratio;
  bool adaptive_tiny = false;
  BiasCorrection bias_correction = BiasCorrection::beta2max;
  std::int64_t warmup_steps = 0;
  BucketMode bucket_mode = BucketMode::global;
  bool diagnostics = false;

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;

  friend bool operator==(const KbetaConfig&, const KbetaConfig&) = default;
};

/// Settings under which the dynamic optimizer reproduces Adam exactly.
KbetaConfig adam_equivalent_config(double beta2, bool bias_correction);

using BucketKey = std::string;

BucketKey bucket_key(std::string_view path, const Shape& shape, BucketMode mode);

// -- scalar pieces of one step -------------------------------------------------

inline double ema_update(double r_prev, double norm, double alpha) {
  return alpha * r_prev + (1.0 - alpha) * norm;
}

/// Squashed spike ratio raw/(1+raw) with raw = norm/(r + tiny_spike); `r` is
/// the EMA already updated with this step's norm. Zero during warmup.
inline double sunspike(double norm, double r, double tiny_spike, std::int64_t t,
                       std::int64_t warmup_steps) {
  if (t <= warmup_steps) return 0.0;
  const double raw = norm / (r + tiny_spike);
  return raw / (1.0 + raw);
}

inline double dynamic_beta2(double sun, const KbetaConfig& cfg, std::int64_t t) {
  if (t <= cfg.warmup_steps) return 0.5 * (cfg.beta2_min + cfg.beta2_max);
  const double b = cfg.beta2_max - (cfg.beta2_max - cfg.beta2_min) * sun;
  return std::clamp(b, cfg.beta2_min, cfg.beta2_max);
}

struct BiasFactors {
  double a1 = 1.0;  // first-moment divisor, scales the step as lr / a1
  double b2 = 1.0;  // second-moment divisor inside the square root
};

/// `log_cumprod` is sum_{i<=t} log beta2_i; only read in exact mode.
BiasFactors bias_factors(BiasCorrection mode, double beta1, double beta2_max,
                         double log_cumprod, std::int64_t t);

// -- tensor pieces ---------------------------------------------------------------

template <class Real>
void moment_update(Tensor<Real>& m, Tensor<Real>& v, const Tensor<Real>& g, Real beta1,
                   Real beta2) {
  if (m.shape() != g.shape() || v.shape() != g.shape()) {
    throw ConfigError("moment_update: shape mismatch");
  }
  const Real one_b1 = Real(1) - beta1;
  const Real one_b2 = Real(1) - beta2;
  for (std::size_t i = 0; i < g.size(); ++i) {
    m[i] = beta1 * m[i] + one_b1 * g[i];
    v[i] = beta2 * v[i] + one_b2 * g[i] * g[i];
  }
}

enum class VmaxMode { off, hard, leaky, degenerate };

/// Which denominator branch a (decay, max_ratio) pair selects.
VmaxMode vmax_mode(std::optional<double> decay, std::optional<double> max_ratio);

/// Picks the second moment used in the denominator and advances `v_max`
/// in place. `v_max` must be non-null exactly when the mode keeps a buffer.
template <class Real>
Tensor<Real> vhat_select(const Tensor<Real>& v, Tensor<Real>* v_max,
                         std::optional<double> decay, std::optional<double> max_ratio) {
  const VmaxMode mode = vmax_mode(decay, max_ratio);
  if ((mode == VmaxMode::off) != (v_max == nullptr)) {
    throw ConfigError("vhat_select: v_max buffer presence does not match decay/max_ratio");
  }
  if (v_max != nullptr && v_max->shape() != v.shape()) {
    throw ConfigError("vhat_select: v_max shape mismatch");
  }
  switch (mode) {
    case VmaxMode::off:
      return v;
    case VmaxMode::degenerate:
      *v_max = v;
      return v;
    case VmaxMode::hard:
      for (std::size_t i = 0; i < v.size(); ++i) (*v_max)[i] = std::max((*v_max)[i], v[i]);
      return *v_max;
    case VmaxMode::leaky: {
      const Real d = static_cast<Real>(*decay);
      for (std::size_t i = 0; i < v.size(); ++i) (*v_max)[i] = std::max(d * (*v_max)[i], v[i]);
      return *v_max;
    }
  }
  return v;
}

// -- state -----------------------------------------------------------------------

struct BucketState {
  BucketKey key;
  std::vector<std::string> paths;  // member tensors, lexicographic
  double r = 0.0;
  double last_sun = 0.0;
  double last_beta2 = 0.0;
  double last_norm = 0.0;
  double log_beta2_cumprod = 0.0;  // sum of log beta2_i, exact bias correction only

  friend bool operator==(const BucketState&, const BucketState&) = default;
};

template <class Real>
struct SlotState {
  Tensor<Real> m;
  Tensor<Real> v;
  std::optional<Tensor<Real>> v_max;

  friend bool operator==(const SlotState&, const SlotState&) = default;
};

template <class Real>
struct OptimizerState {
  std::int64_t t = 0;
  KbetaConfig config;
  std::map<std::string, SlotState<Real>> slots;
  std::map<BucketKey, BucketState> buckets;
  std::vector<SunspikeRecord> history;  // filled only with config.diagnostics
};

template <class Real>
OptimizerState<Real> make_kbeta_state(const KbetaConfig& cfg, const ParamTree<Real>& params) {
  cfg.validate();
  if (params.empty()) throw ConfigError("optimizer needs at least one parameter");
  OptimizerState<Real> state;
  state.config = cfg;
  const bool keep_vmax = vmax_mode(cfg.decay, cfg.max_ratio) != VmaxMode::off;
  for (const auto& [path, p] : params) {
    SlotState<Real> slot{Tensor<Real>::zeros_like(p), Tensor<Real>::zeros_like(p), std::nullopt};
    if (keep_vmax) slot.v_max = Tensor<Real>::zeros_like(p);
    state.slots.emplace(path, std::move(slot));
    const BucketKey key = bucket_key(path, p.shape(), cfg.bucket_mode);
    auto& bucket = state.buckets[key];
    bucket.key = key;
    bucket.paths.push_back(path);
  }
  return state;
}

namespace detail {

template <class Real>
void check_step_inputs(const std::map<std::string, SlotState<Real>>& slots,
                       const ParamTree<Real>& grads, const ParamTree<Real>& params) {
  auto mismatch = [](const std::string& what) {
    throw ConfigError("optimizer step: path mismatch between state and " + what);
  };
  if (grads.size() != slots.size()) mismatch("gradients");
  if (params.size() != slots.size()) mismatch("parameters");
  auto ig = grads.begin();
  auto ip = params.begin();
  for (const auto& [path, slot] : slots) {
    if (ig->first != path || ig->second.shape() != slot.m.shape()) mismatch("gradients at " + ig->first);
    if (ip->first != path || ip->second.shape() != slot.m.shape()) mismatch("parameters at " + ip->first);
    if (!ig->second.all_finite()) {
      throw NonFiniteError("non-finite gradient in '" + path + "'");
    }
    ++ig;
    ++ip;
  }
}

template <class Real>
double mean_abs(const Tensor<Real>& p) {
  double acc = 0.0;
  for (Real x : p) acc += std::abs(static_cast<double>(x));
  return acc / static_cast<double>(p.size());
}

}  // namespace detail

/// One optimizer step in place. Per bucket: pooled norm, EMA, sunspike and
/// beta2 computed once; per tensor: moments, vhat, bias correction,
/// denominator, optional clip, update. Inputs are validated before any state
/// is touched, so a rejected step leaves `state` and `params` unchanged.
template <class Real>
void kbeta_step(OptimizerState<Real>& state, const ParamTree<Real>& grads,
                ParamTree<Real>& params, double lr) {
  detail::check_step_inputs(state.slots, grads, params);
  const KbetaConfig& cfg = state.config;
  const std::int64_t t = state.t + 1;
  const VmaxMode mode = vmax_mode(cfg.decay, cfg.max_ratio);

  const Real beta1 = static_cast<Real>(cfg.beta1);
  const Real eps = static_cast<Real>(cfg.eps);
  const bool clip = cfg.max_ratio.has_value();
  const Real clip_bound = clip ? static_cast<Real>(lr * *cfg.max_ratio)
                               : std::numeric_limits<Real>::infinity();
  const Real leak = static_cast<Real>(cfg.decay.value_or(1.0));

  std::vector<const Tensor<Real>*> bucket_grads;
  for (auto& [key, bucket] : state.buckets) {
    bucket_grads.clear();
    for (const auto& path : bucket.paths) bucket_grads.push_back(&grads.at(path));
    if (bucket_grads.empty()) throw ConfigError("bucket '" + key + "' has no tensors");

    const double norm = pooled_l2_norm(bucket_grads);
    bucket.r = ema_update(bucket.r, norm, cfg.alpha);
    bucket.last_norm = norm;
    bucket.last_sun = sunspike(norm, bucket.r, cfg.tiny_spike, t, cfg.warmup_steps);
    bucket.last_beta2 = dynamic_beta2(bucket.last_sun, cfg, t);
    if (cfg.bias_correction == BiasCorrection::exact) {
      bucket.log_beta2_cumprod += std::log(bucket.last_beta2);
    }
    if (cfg.diagnostics) {
      state.history.push_back(
          {t, key, bucket.last_sun, bucket.last_beta2, norm, bucket.r});
    }

    const BiasFactors bf = bias_factors(cfg.bias_correction, cfg.beta1, cfg.beta2_max,
                                        bucket.log_beta2_cumprod, t);
    const Real beta2 = static_cast<Real>(bucket.last_beta2);
    const Real one_b1 = Real(1) - beta1;
    const Real one_b2 = Real(1) - beta2;
    const Real step_scale = static_cast<Real>(lr / bf.a1);
    const Real b2 = static_cast<Real>(bf.b2);

    for (const auto& path : bucket.paths) {
      const Tensor<Real>& g = grads.at(path);
      Tensor<Real>& p = params.at(path);
      SlotState<Real>& slot = state.slots.at(path);
      const Real tiny = cfg.adaptive_tiny
                            ? static_cast<Real>(cfg.tiny_denom * std::max(detail::mean_abs(p), 1.0))
                            : Real(0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        Real& m = slot.m[i];
        Real& v = slot.v[i];
        m = beta1 * m + one_b1 * g[i];
        v = beta2 * v + one_b2 * g[i] * g[i];
        Real vhat = v;
        switch (mode) {
          case VmaxMode::off:
            break;
          case VmaxMode::degenerate:
            (*slot.v_max)[i] = v;
            break;
          case VmaxMode::hard:
            vhat = (*slot.v_max)[i] = std::max((*slot.v_max)[i], v);
            break;
          case VmaxMode::leaky:
            vhat = (*slot.v_max)[i] = std::max(leak * (*slot.v_max)[i], v);
            break;
        }
        const Real denom = std::sqrt(vhat / b2) + eps + tiny;
        Real delta = step_scale * m / denom;
        if (clip) delta = std::clamp(delta, -clip_bound, clip_bound);
        p[i] -= delta;
      }
    }
  }
  state.t = t;
}

// -- Adam baseline ---------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool bias_correction = true;

  void validate() const;
  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

template <class Real>
struct AdamState {
  std::int64_t t = 0;
  AdamConfig config;
  std::map<std::string, SlotState<Real>> slots;
};

template <class Real>
AdamState<Real> make_adam_state(const AdamConfig& cfg, const ParamTree<Real>& params) {
  cfg.validate();
  if (params.empty()) throw ConfigError("optimizer needs at least one parameter");
  AdamState<Real> state;
  state.config = cfg;
  for (const auto& [path, p] : params) {
    state.slots.emplace(path, SlotState<Real>{Tensor<Real>::zeros_like(p),
                                              Tensor<Real>::zeros_like(p), std::nullopt});
  }
  return state;
}

/// Textbook Adam: theta -= lr * mhat / (sqrt(vhat) + eps), with mhat = m/(1-beta1^t)
/// and vhat = v/(1-beta2^t) when bias correction is on.
template <class Real>
void adam_step(AdamState<Real>& state, const ParamTree<Real>& grads, ParamTree<Real>& params,
               double lr) {
  detail::check_step_inputs(state.slots, grads, params);
  const AdamConfig& cfg = state.config;
  const std::int64_t t = state.t + 1;
  const Real beta1 = static_cast<Real>(cfg.beta1);
  const Real beta2 = static_cast<Real>(cfg.beta2);
  const Real eps = static_cast<Real>(cfg.eps);
  const Real rate = static_cast<Real>(lr);
  const Real c1 = cfg.bias_correction
                      ? static_cast<Real>(1.0 - std::pow(cfg.beta1, static_cast<double>(t)))
                      : Real(1);
  const Real c2 = cfg.bias_correction
                      ? static_cast<Real>(1.0 - std::pow(cfg.beta2, static_cast<double>(t)))
                      : Real(1);
  for (auto& [path, slot] : state.slots) {
    moment_update(slot.m, slot.v, grads.at(path), beta1, beta2);
    Tensor<Real>& p = params.at(path);
    if (cfg.bias_correction) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        const Real mhat = slot.m[i] / c1;
        const Real vhat = slot.v[i] / c2;
        p[i] -= rate * mhat / (std::sqrt(vhat) + eps);
      }
    } else {
      for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] -= rate * slot.m[i] / (std::sqrt(slot.v[i]) + eps);
      }
    }
  }
  state.t = t;
}

// -- polymorphic handle used by the harness ---------------------------------------

template <class Real>
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(const ParamTree<Real>& grads, ParamTree<Real>& params, double lr) = 0;
  virtual std::int64_t step_count() const = 0;
  virtual const Tensor<Real>& second_moment(const std::string& path) const = 0;
  /// Bounds every beta2 this optimizer can apply; equal for fixed-beta2 methods.
  virtual std::pair<double, double> beta2_range() const = 0;
  virtual std::vector<SunspikeRecord> take_history() { return {}; }
};

template <class Real>
class KbetaOptimizer final : public Optimizer<Real> {
 public:
  KbetaOptimizer(const KbetaConfig& cfg, const ParamTree<Real>& params)
      : state_(make_kbeta_state(cfg, params)) {}
  explicit KbetaOptimizer(OptimizerState<Real> state) : state_(std::move(state)) {
    state_.config.validate();
  }

  void step(const ParamTree<Real>& grads, ParamTree<Real>& params, double lr) override {
    kbeta_step(state_, grads, params, lr);
  }
  void step(const ParamTree<Real>& grads, ParamTree<Real>& params) {
    step(grads, params, state_.config.lr);
  }
  std::int64_t step_count() const override { return state_.t; }
  const Tensor<Real>& second_moment(const std::string& path) const override {
    return state_.slots.at(path).v;
  }
  std::pair<double, double> beta2_range() const override {
    return {state_.config.beta2_min, state_.config.beta2_max};
  }
  std::vector<SunspikeRecord> take_history() override {
    return std::exchange(state_.history, {});
  }

  const OptimizerState<Real>& state() const { return state_; }
  OptimizerState<Real>& state() { return state_; }

 private:
  OptimizerState<Real> state_;
};

template <class Real>
class AdamOptimizer final : public Optimizer<Real> {
 public:
  AdamOptimizer(const AdamConfig& cfg, const ParamTree<Real>& params)
      : state_(make_adam_state(cfg, params)) {}

  void step(const ParamTree<Real>& grads, ParamTree<Real>& params, double lr) override {
    adam_step(state_, grads, params, lr);
  }
  std::int64_t step_count() const override { return state_.t; }
  const Tensor<Real>& second_moment(const std::string& path) const override {
    return state_.slots.at(path).v;
  }
  std::pair<double, double> beta2_range() const override {
    return {state_.config.beta2, state_.config.beta2};
  }

  const AdamState<Real>& state() const { return state_; }
  AdamState<Real>& state() { return state_; }

 private:
  AdamState<Real> state_;
};

}  // namespace kbeta
