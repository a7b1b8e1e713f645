#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kbeta/error.hpp"
#include "kbeta/rng.hpp"
#include "kbeta/tensor.hpp"

namespace kbeta {

struct Evaluation {
  double loss = 0.0;
  std::optional<double> accuracy;
};

/// A deterministic training problem with an analytic gradient. Everything a
/// run sees is a pure function of the construction seed and the step index.
template <class Real>
class Testbed {
 public:
  virtual ~Testbed() = default;
  virtual std::string name() const = 0;
  virtual ParamTree<Real> init_params() const = 0;
  /// Training loss for step `step` (1-indexed); writes d loss / d params into `grad`.
  virtual double loss_and_grad(const ParamTree<Real>& params, std::int64_t step,
                               ParamTree<Real>& grad) const = 0;
  virtual double loss(const ParamTree<Real>& params, std::int64_t step) const = 0;
  virtual Evaluation evaluate(const ParamTree<Real>& params) const = 0;
  virtual nlohmann::json config_json() const = 0;
  virtual std::int64_t default_steps() const = 0;
  virtual double default_lr() const = 0;
  virtual std::int64_t default_untimed_steps() const { return 0; }
};

// -- numerics shared by the classifiers ----------------------------------------------

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Mean of max(x,0) - x*y + log(1+exp(-|x|)) over the batch.
double bce_with_logits(std::span<const double> logits, std::span<const int> labels);

// -- linear toy problems ---------------------------------------------------------------

enum class ToyKind { least_squares, logistic, concave_utility };

/// Fixed synthetic dataset for the three linear toys. X ~ N(0,1); the generating
/// weights are N(0,1). Least squares adds `noise` * N(0,1) and a bias; the
/// classifiers label by sign(x . w_true) and resample points closer than
/// `margin` to the separating hyperplane.
struct ToyConfig {
  ToyKind kind = ToyKind::least_squares;
  int samples = 256;
  int features = 8;
  double noise = 0.007;
  double true_bias = 0.5;
  double margin = 0.1;
  std::int64_t steps = 10000;
  double lr = 1e-3;
  /// "zeros" or "truth" (start at the generating weights; least squares only).
  std::string init = "zeros";

  static ToyConfig sanity1();
  static ToyConfig sanity2();
  static ToyConfig sanity3();

  void validate() const;
  nlohmann::json to_json() const;
  static ToyConfig from_json(const nlohmann::json& j, ToyConfig defaults);
};

std::string to_string(ToyKind kind);

struct ToyData {
  int n = 0;
  int d = 0;
  std::vector<double> x;  // n x d row-major
  std::vector<double> y;  // targets, or labels in {0, 1}
  std::vector<double> w_true;
  double b_true = 0.0;
};

ToyData make_toy_data(const ToyConfig& cfg, std::uint64_t seed);

/// Loss of the linear model (w, b) on `data`; fills gradients when non-null.
double toy_loss(const ToyData& data, ToyKind kind, std::span<const double> w, double b,
                std::vector<double>* grad_w, double* grad_b);
double toy_accuracy(const ToyData& data, std::span<const double> w, double b);

template <class Real>
class ToyProblem final : public Testbed<Real> {
 public:
  ToyProblem(ToyConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
    cfg_.validate();
    data_ = make_toy_data(cfg_, seed_);
  }

  std::string name() const override { return to_string(cfg_.kind); }

  ParamTree<Real> init_params() const override {
    ParamTree<Real> p;
    Tensor<Real> w(Shape{static_cast<std::size_t>(cfg_.features)});
    Tensor<Real> b(Shape{1});
    if (cfg_.init == "truth") {
      for (int i = 0; i < cfg_.features; ++i) w[i] = static_cast<Real>(data_.w_true[i]);
      b[0] = static_cast<Real>(data_.b_true);
    }
    p.emplace("linear/b", std::move(b));
    p.emplace("linear/w", std::move(w));
    return p;
  }

  double loss_and_grad(const ParamTree<Real>& params, std::int64_t, ParamTree<Real>& grad) const override {
    std::vector<double> w = weights(params);
    std::vector<double> gw;
    double gb = 0.0;
    const double loss = toy_loss(data_, cfg_.kind, w, bias(params), &gw, &gb);
    grad = zeros_like(params);
    Tensor<Real>& tw = grad.at("linear/w");
    for (std::size_t i = 0; i < gw.size(); ++i) tw[i] = static_cast<Real>(gw[i]);
    grad.at("linear/b")[0] = static_cast<Real>(gb);
    return loss;
  }

  double loss(const ParamTree<Real>& params, std::int64_t) const override {
    return toy_loss(data_, cfg_.kind, weights(params), bias(params), nullptr, nullptr);
  }

  Evaluation evaluate(const ParamTree<Real>& params) const override {
    Evaluation e{loss(params, 0), std::nullopt};
    if (cfg_.kind != ToyKind::least_squares) e.accuracy = toy_accuracy(data_, weights(params), bias(params));
    return e;
  }

  nlohmann::json config_json() const override {
    nlohmann::json j = cfg_.to_json();
    j["data_seed"] = seed_;
    return j;
  }
  std::int64_t default_steps() const override { return cfg_.steps; }
  double default_lr() const override { return cfg_.lr; }

  const ToyData& data() const { return data_; }
  const ToyConfig& config() const { return cfg_; }

 private:
  static std::vector<double> weights(const ParamTree<Real>& params) {
    const Tensor<Real>& w = params.at("linear/w");
    return std::vector<double>(w.begin(), w.end());
  }
  static double bias(const ParamTree<Real>& params) { return params.at("linear/b")[0]; }

  ToyConfig cfg_;
  std::uint64_t seed_;
  ToyData data_;
};

// -- length-jitter + rare-trigger classifier ---------------------------------------------

struct RareTriggerConfig {
  int batch = 64;
  int embed_dim = 64;
  int len_min = 80;
  int len_max = 256;
  double p_trigger = 0.01;
  int vocab = 256;
  int pad_id = 0;
  int trig_id = 255;
  /// Background tokens are drawn uniformly from [token_min, token_max].
  int token_min = 1;
  int token_max = 254;
  std::int64_t steps = 30000;
  double lr = 1e-2;
  std::int64_t warmup_untimed = 10;
  /// Final loss is measured on a fixed held-out set drawn from `eval_seed`.
  int eval_samples = 4096;
  std::uint64_t eval_seed = 1234;

  void validate() const;
  nlohmann::json to_json() const;
  static RareTriggerConfig from_json(const nlohmann::json& j);
};

struct RareTriggerBatch {
  int rows = 0;
  int width = 0;                     // len_max; positions >= length hold pad_id
  std::vector<std::int32_t> tokens;  // rows x width
  std::vector<std::int32_t> lengths;
  std::vector<int> labels;

  std::int32_t token(int row, int pos) const { return tokens[static_cast<std::size_t>(row) * width + pos]; }
};

/// `rows` sequences; `rows <= 0` means cfg.batch.
RareTriggerBatch gen_rare_trigger_batch(Rng& rng, const RareTriggerConfig& cfg, int rows = 0);

/// Batch for training step `step` of a run seeded with `base_seed`.
RareTriggerBatch rare_trigger_step_batch(std::uint64_t base_seed, std::int64_t step,
                                         const RareTriggerConfig& cfg);

/// Model paths: "embed/E" [vocab, d], "head/b" [1], "head/w" [d].
template <class Real>
ParamTree<Real> rare_trigger_init(const RareTriggerConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xC0FFEEull));
  const auto d = static_cast<std::size_t>(cfg.embed_dim);
  const auto v = static_cast<std::size_t>(cfg.vocab);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor<Real> e(Shape{v, d});
  for (auto& x : e) x = static_cast<Real>(rng.normal() * scale);
  Tensor<Real> w(Shape{d});
  for (auto& x : w) x = static_cast<Real>((2.0 * rng.uniform() - 1.0) * scale);
  Tensor<Real> b(Shape{1});
  b[0] = static_cast<Real>((2.0 * rng.uniform() - 1.0) * scale);
  ParamTree<Real> p;
  p.emplace("embed/E", std::move(e));
  p.emplace("head/b", std::move(b));
  p.emplace("head/w", std::move(w));
  return p;
}

namespace detail {

// Per-vocabulary score s_v = E[v] . w; the mean-pooled logit is the mean of s over valid tokens.
template <class Real>
std::vector<double> token_scores(const ParamTree<Real>& model) {
  const Tensor<Real>& e = model.at("embed/E");
  const Tensor<Real>& w = model.at("head/w");
  const std::size_t v = e.shape()[0];
  const std::size_t d = e.shape()[1];
  if (w.size() != d) throw ConfigError("rare trigger model: head/w does not match embed/E");
  std::vector<double> s(v, 0.0);
  for (std::size_t r = 0; r < v; ++r) {
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) acc += static_cast<double>(e[r * d + k]) * static_cast<double>(w[k]);
    s[r] = acc;
  }
  return s;
}

}  // namespace detail

template <class Real>
std::vector<double> rare_trigger_forward(const ParamTree<Real>& model, const RareTriggerBatch& batch) {
  const std::vector<double> s = detail::token_scores(model);
  const double b = model.at("head/b")[0];
  std::vector<double> logits(static_cast<std::size_t>(batch.rows));
  for (int i = 0; i < batch.rows; ++i) {
    const int len = batch.lengths[i];
    if (len < 1) throw ConfigError("rare trigger forward: sequence length must be >= 1");
    double acc = 0.0;
    for (int j = 0; j < len; ++j) acc += s.at(static_cast<std::size_t>(batch.token(i, j)));
    logits[i] = acc / len + b;
  }
  return logits;
}

/// Exact gradient of bce_with_logits o rare_trigger_forward. Returns the loss.
template <class Real>
double rare_trigger_grad(const ParamTree<Real>& model, const RareTriggerBatch& batch,
                         ParamTree<Real>& grad) {
  const std::vector<double> logits = rare_trigger_forward(model, batch);
  const double loss = bce_with_logits(logits, batch.labels);
  const Tensor<Real>& e = model.at("embed/E");
  const Tensor<Real>& w = model.at("head/w");
  const std::size_t v = e.shape()[0];
  const std::size_t d = e.shape()[1];

  // a_v = sum_i c_i * count_iv / L_i with c_i = dloss/dlogit_i.
  std::vector<double> a(v, 0.0);
  double gb = 0.0;
  const double inv_rows = 1.0 / batch.rows;
  for (int i = 0; i < batch.rows; ++i) {
    const double c = (sigmoid(logits[i]) - batch.labels[i]) * inv_rows;
    gb += c;
    const double per_token = c / batch.lengths[i];
    for (int j = 0; j < batch.lengths[i]; ++j) a[static_cast<std::size_t>(batch.token(i, j))] += per_token;
  }

  grad = zeros_like(model);
  Tensor<Real>& ge = grad.at("embed/E");
  Tensor<Real>& gw = grad.at("head/w");
  std::vector<double> gw_acc(d, 0.0);
  for (std::size_t r = 0; r < v; ++r) {
    if (a[r] == 0.0) continue;
    for (std::size_t k = 0; k < d; ++k) {
      ge[r * d + k] = static_cast<Real>(a[r] * static_cast<double>(w[k]));
      gw_acc[k] += a[r] * static_cast<double>(e[r * d + k]);
    }
  }
  for (std::size_t k = 0; k < d; ++k) gw[k] = static_cast<Real>(gw_acc[k]);
  grad.at("head/b")[0] = static_cast<Real>(gb);
  return loss;
}

double batch_accuracy(std::span<const double> logits, std::span<const int> labels);

template <class Real>
class RareTrigger final : public Testbed<Real> {
 public:
  RareTrigger(RareTriggerConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
    cfg_.validate();
    Rng rng(derive_seed(cfg_.eval_seed, 0xE7A1ull));
    eval_ = gen_rare_trigger_batch(rng, cfg_, cfg_.eval_samples);
  }

  std::string name() const override { return "rare_trigger"; }
  ParamTree<Real> init_params() const override { return rare_trigger_init<Real>(cfg_, seed_); }

  double loss_and_grad(const ParamTree<Real>& params, std::int64_t step, ParamTree<Real>& grad) const override {
    return rare_trigger_grad(params, rare_trigger_step_batch(seed_, step, cfg_), grad);
  }
  double loss(const ParamTree<Real>& params, std::int64_t step) const override {
    const RareTriggerBatch batch = rare_trigger_step_batch(seed_, step, cfg_);
    return bce_with_logits(rare_trigger_forward(params, batch), batch.labels);
  }
  Evaluation evaluate(const ParamTree<Real>& params) const override {
    const std::vector<double> logits = rare_trigger_forward(params, eval_);
    return {bce_with_logits(logits, eval_.labels), batch_accuracy(logits, eval_.labels)};
  }
  nlohmann::json config_json() const override { return cfg_.to_json(); }
  std::int64_t default_steps() const override { return cfg_.steps; }
  double default_lr() const override { return cfg_.lr; }
  std::int64_t default_untimed_steps() const override { return cfg_.warmup_untimed; }

  const RareTriggerConfig& config() const { return cfg_; }
  const RareTriggerBatch& eval_batch() const { return eval_; }

 private:
  RareTriggerConfig cfg_;
  std::uint64_t seed_;
  RareTriggerBatch eval_;
};

/// Known names: sanity1, sanity2, sanity3, rare_trigger. `overrides` patches the
/// testbed's default config field by field.
template <class Real>
std::unique_ptr<Testbed<Real>> make_testbed(const std::string& name, std::uint64_t seed,
                                            const nlohmann::json& overrides = nlohmann::json::object());

std::vector<std::string> testbed_names();

}  // namespace kbeta
