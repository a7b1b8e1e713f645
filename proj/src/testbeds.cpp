#include "kbeta/testbeds.hpp"

#include <numeric>

namespace kbeta {

namespace {

void reject_unknown_keys(const nlohmann::json& j, const nlohmann::json& known, const char* who) {
  if (!j.is_object()) throw ConfigError(std::string(who) + ": expected a JSON object");
  for (const auto& item : j.items()) {
    if (!known.contains(item.key())) throw ConfigError(std::string(who) + ": unknown field '" + item.key() + "'");
  }
}

template <class Fn>
auto json_guard(const char* who, Fn fn) {
  try {
    return fn();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(who) + ": " + e.what());
  }
}

}  // namespace

double bce_with_logits(std::span<const double> logits, std::span<const int> labels) {
  if (logits.size() != labels.size()) throw ConfigError("bce_with_logits: size mismatch");
  if (logits.empty()) throw ConfigError("bce_with_logits: empty batch");
  double acc = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double x = logits[i];
    const double y = labels[i];
    acc += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  return acc / static_cast<double>(logits.size());
}

double batch_accuracy(std::span<const double> logits, std::span<const int> labels) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if ((logits[i] > 0.0) == (labels[i] == 1)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(logits.size());
}

// -- toys ----------------------------------------------------------------------------

std::string to_string(ToyKind kind) {
  switch (kind) {
    case ToyKind::least_squares: return "sanity1";
    case ToyKind::logistic: return "sanity2";
    case ToyKind::concave_utility: return "sanity3";
  }
  return "?";
}

ToyConfig ToyConfig::sanity1() { return ToyConfig{}; }

ToyConfig ToyConfig::sanity2() {
  ToyConfig c;
  c.kind = ToyKind::logistic;
  c.noise = 0.0;
  c.true_bias = 0.0;
  c.steps = 20000;
  c.lr = 1e-2;
  return c;
}

ToyConfig ToyConfig::sanity3() {
  ToyConfig c = sanity2();
  c.kind = ToyKind::concave_utility;
  c.steps = 50000;
  c.lr = 5e-2;
  return c;
}

void ToyConfig::validate() const {
  if (samples < 1 || features < 1) throw ConfigError("toy config: samples and features must be >= 1");
  if (!(noise >= 0.0)) throw ConfigError("toy config: noise must be >= 0");
  if (!(margin >= 0.0)) throw ConfigError("toy config: margin must be >= 0");
  if (steps < 0) throw ConfigError("toy config: steps must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("toy config: lr must be positive");
  if (init != "zeros" && init != "truth") throw ConfigError("toy config: init must be zeros or truth");
}

nlohmann::json ToyConfig::to_json() const {
  return {{"kind", to_string(kind)}, {"samples", samples}, {"features", features},
          {"noise", noise},          {"true_bias", true_bias}, {"margin", margin},
          {"steps", steps},          {"lr", lr},            {"init", init}};
}

ToyConfig ToyConfig::from_json(const nlohmann::json& j, ToyConfig c) {
  reject_unknown_keys(j, c.to_json(), "toy config");
  if (j.contains("kind") && j.at("kind") != to_string(c.kind)) {
    throw ConfigError("toy config: kind does not match the testbed");
  }
  return json_guard("toy config", [&] {
  c.samples = j.value("samples", c.samples);
  c.features = j.value("features", c.features);
  c.noise = j.value("noise", c.noise);
  c.true_bias = j.value("true_bias", c.true_bias);
  c.margin = j.value("margin", c.margin);
  c.steps = j.value("steps", c.steps);
  c.lr = j.value("lr", c.lr);
  c.init = j.value("init", c.init);
  c.validate();
  return c;
  });
}

ToyData make_toy_data(const ToyConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, 0x70Cull + static_cast<std::uint64_t>(cfg.kind)));
  ToyData data;
  data.n = cfg.samples;
  data.d = cfg.features;
  data.w_true = rng_normal(rng, static_cast<std::size_t>(cfg.features));
  data.b_true = cfg.true_bias;
  const double w_norm = std::sqrt(std::inner_product(data.w_true.begin(), data.w_true.end(),
                                                     data.w_true.begin(), 0.0));
  data.x.reserve(static_cast<std::size_t>(cfg.samples) * cfg.features);
  std::vector<double> row(static_cast<std::size_t>(cfg.features));
  for (int i = 0; i < cfg.samples; ++i) {
    double score = 0.0;
    do {
      for (auto& v : row) v = rng.normal();
      score = std::inner_product(row.begin(), row.end(), data.w_true.begin(), 0.0) + data.b_true;
    } while (cfg.kind != ToyKind::least_squares && std::abs(score) < cfg.margin * w_norm);
    data.x.insert(data.x.end(), row.begin(), row.end());
    if (cfg.kind == ToyKind::least_squares) {
      data.y.push_back(score + cfg.noise * rng.normal());
    } else {
      data.y.push_back(score > 0.0 ? 1.0 : 0.0);
    }
  }
  return data;
}

double toy_loss(const ToyData& data, ToyKind kind, std::span<const double> w, double b,
                std::vector<double>* grad_w, double* grad_b) {
  if (w.size() != static_cast<std::size_t>(data.d)) throw ConfigError("toy_loss: weight size mismatch");
  if (grad_w) grad_w->assign(w.size(), 0.0);
  if (grad_b) *grad_b = 0.0;
  const double inv_n = 1.0 / data.n;
  double loss = 0.0;
  for (int i = 0; i < data.n; ++i) {
    const double* x = &data.x[static_cast<std::size_t>(i) * data.d];
    double z = b;
    for (int k = 0; k < data.d; ++k) z += x[k] * w[k];
    double dz = 0.0;
    if (kind == ToyKind::least_squares) {
      const double r = z - data.y[i];
      loss += r * r;
      dz = 2.0 * r;
    } else {
      const double s = data.y[i] > 0.5 ? 1.0 : -1.0;
      loss += softplus(-s * z);
      dz = -s * sigmoid(-s * z);
    }
    if (grad_w) {
      for (int k = 0; k < data.d; ++k) (*grad_w)[k] += dz * x[k] * inv_n;
    }
    if (grad_b) *grad_b += dz * inv_n;
  }
  return loss * inv_n;
}

double toy_accuracy(const ToyData& data, std::span<const double> w, double b) {
  int hits = 0;
  for (int i = 0; i < data.n; ++i) {
    const double* x = &data.x[static_cast<std::size_t>(i) * data.d];
    double z = b;
    for (int k = 0; k < data.d; ++k) z += x[k] * w[k];
    if ((z > 0.0) == (data.y[i] > 0.5)) ++hits;
  }
  return static_cast<double>(hits) / data.n;
}

// -- rare trigger ----------------------------------------------------------------------

void RareTriggerConfig::validate() const {
  auto fail = [](const std::string& why) { throw ConfigError("rare trigger config: " + why); };
  if (batch < 1) fail("batch must be >= 1");
  if (embed_dim < 1) fail("embed_dim must be >= 1");
  if (len_min < 1 || len_min > len_max) fail("need 1 <= len_min <= len_max");
  if (!(p_trigger >= 0.0 && p_trigger <= 1.0)) fail("p_trigger must lie in [0, 1]");
  if (vocab < 2) fail("vocab must be >= 2");
  if (pad_id == trig_id) fail("pad_id must differ from trig_id");
  if (pad_id < 0 || pad_id >= vocab || trig_id < 0 || trig_id >= vocab) fail("ids must lie in the vocabulary");
  if (token_min < 0 || token_min > token_max || token_max >= vocab) fail("bad background token range");
  if (pad_id >= token_min && pad_id <= token_max) fail("background tokens must exclude pad_id");
  if (steps < 0 || warmup_untimed < 0) fail("steps and warmup_untimed must be >= 0");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (eval_samples < 1) fail("eval_samples must be >= 1");
}

nlohmann::json RareTriggerConfig::to_json() const {
  return {{"batch", batch},         {"embed_dim", embed_dim},   {"len_min", len_min},
          {"len_max", len_max},     {"p_trigger", p_trigger},   {"vocab", vocab},
          {"pad_id", pad_id},       {"trig_id", trig_id},       {"token_min", token_min},
          {"token_max", token_max}, {"steps", steps},           {"lr", lr},
          {"warmup_untimed", warmup_untimed}, {"eval_samples", eval_samples},
          {"eval_seed", eval_seed}};
}

RareTriggerConfig RareTriggerConfig::from_json(const nlohmann::json& j) {
  RareTriggerConfig c;
  reject_unknown_keys(j, c.to_json(), "rare trigger config");
  return json_guard("rare trigger config", [&] {
  c.batch = j.value("batch", c.batch);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.len_min = j.value("len_min", c.len_min);
  c.len_max = j.value("len_max", c.len_max);
  c.p_trigger = j.value("p_trigger", c.p_trigger);
  c.vocab = j.value("vocab", c.vocab);
  c.pad_id = j.value("pad_id", c.pad_id);
  c.trig_id = j.value("trig_id", c.trig_id);
  c.token_min = j.value("token_min", c.token_min);
  c.token_max = j.value("token_max", c.token_max);
  c.steps = j.value("steps", c.steps);
  c.lr = j.value("lr", c.lr);
  c.warmup_untimed = j.value("warmup_untimed", c.warmup_untimed);
  c.eval_samples = j.value("eval_samples", c.eval_samples);
  c.eval_seed = j.value("eval_seed", c.eval_seed);
  c.validate();
  return c;
  });
}

RareTriggerBatch gen_rare_trigger_batch(Rng& rng, const RareTriggerConfig& cfg, int rows) {
  if (rows <= 0) rows = cfg.batch;
  RareTriggerBatch out;
  out.rows = rows;
  out.width = cfg.len_max;
  out.tokens.assign(static_cast<std::size_t>(rows) * cfg.len_max, cfg.pad_id);
  out.lengths.resize(static_cast<std::size_t>(rows));
  out.labels.resize(static_cast<std::size_t>(rows));
  for (int i = 0; i < rows; ++i) {
    const auto len = static_cast<int>(rng.uniform_int(cfg.len_min, cfg.len_max));
    std::int32_t* row = &out.tokens[static_cast<std::size_t>(i) * cfg.len_max];
    for (int j = 0; j < len; ++j) row[j] = static_cast<std::int32_t>(rng.uniform_int(cfg.token_min, cfg.token_max));
    if (rng.bernoulli(cfg.p_trigger)) row[rng.uniform_int(0, len - 1)] = cfg.trig_id;
    out.lengths[i] = len;
    out.labels[i] = std::find(row, row + len, cfg.trig_id) != row + len ? 1 : 0;
  }
  return out;
}

RareTriggerBatch rare_trigger_step_batch(std::uint64_t base_seed, std::int64_t step,
                                         const RareTriggerConfig& cfg) {
  Rng rng(derive_seed(base_seed, static_cast<std::uint64_t>(step)));
  return gen_rare_trigger_batch(rng, cfg);
}

// -- factory -----------------------------------------------------------------------------

std::vector<std::string> testbed_names() { return {"sanity1", "sanity2", "sanity3", "rare_trigger"}; }

template <class Real>
std::unique_ptr<Testbed<Real>> make_testbed(const std::string& name, std::uint64_t seed,
                                            const nlohmann::json& overrides) {
  if (name == "sanity1") return std::make_unique<ToyProblem<Real>>(ToyConfig::from_json(overrides, ToyConfig::sanity1()), seed);
  if (name == "sanity2") return std::make_unique<ToyProblem<Real>>(ToyConfig::from_json(overrides, ToyConfig::sanity2()), seed);
  if (name == "sanity3") return std::make_unique<ToyProblem<Real>>(ToyConfig::from_json(overrides, ToyConfig::sanity3()), seed);
  if (name == "rare_trigger") return std::make_unique<RareTrigger<Real>>(RareTriggerConfig::from_json(overrides), seed);
  throw ConfigError("unknown testbed '" + name + "'");
}

template std::unique_ptr<Testbed<float>> make_testbed<float>(const std::string&, std::uint64_t,
                                                             const nlohmann::json&);
template std::unique_ptr<Testbed<double>> make_testbed<double>(const std::string&, std::uint64_t,
                                                               const nlohmann::json&);

}  // namespace kbeta
