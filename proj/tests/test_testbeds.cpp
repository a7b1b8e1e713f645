#include <doctest.h>

#include <cmath>

#include "kbeta/testbeds.hpp"

using namespace kbeta;

namespace {

double rel_err(const ParamTree<double>& analytic, const ParamTree<double>& numeric) {
  double diff = 0.0, scale = 0.0;
  for (const auto& [path, f] : numeric) {
    const auto& a = analytic.at(path);
    for (std::size_t i = 0; i < f.size(); ++i) {
      diff = std::max(diff, std::abs(a[i] - f[i]));
      scale = std::max(scale, std::abs(f[i]));
    }
  }
  return diff / std::max(scale, 1e-12);
}

RareTriggerConfig small_rt() {
  RareTriggerConfig c;
  c.batch = 4;
  c.embed_dim = 3;
  c.vocab = 12;
  c.trig_id = 11;
  c.token_max = 11;
  c.len_min = 2;
  c.len_max = 7;
  c.p_trigger = 0.3;
  c.eval_samples = 8;
  return c;
}

RareTriggerBatch manual_batch(std::vector<std::vector<int>> rows, int width) {
  RareTriggerBatch b;
  b.rows = static_cast<int>(rows.size());
  b.width = width;
  for (auto& r : rows) {
    b.lengths.push_back(static_cast<int>(r.size()));
    int label = 0;
    for (int j = 0; j < width; ++j) {
      const int tok = j < static_cast<int>(r.size()) ? r[j] : 0;
      b.tokens.push_back(tok);
      label |= tok == 255;
    }
    b.labels.push_back(label);
  }
  return b;
}

}  // namespace

TEST_CASE("bce_with_logits examples") {
  const std::vector<int> one{1};
  CHECK(bce_with_logits(std::vector<double>{0.0}, one) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(bce_with_logits(std::vector<double>{100.0}, one) < 1e-40);
  CHECK(bce_with_logits(std::vector<double>{-100.0}, one) == doctest::Approx(100.0).epsilon(1e-15));
  for (double x : {-1e4, -700.0, -1.0, 0.0, 3.0, 800.0, 1e4}) {
    for (int y : {0, 1}) {
      const double v = bce_with_logits(std::vector<double>{x}, std::vector<int>{y});
      CHECK(std::isfinite(v));
      CHECK(v >= 0.0);
    }
  }
  CHECK(bce_with_logits(std::vector<double>{2.0, -1.0}, std::vector<int>{1, 0}) ==
        doctest::Approx(0.5 * (std::log1p(std::exp(-2.0)) + std::log1p(std::exp(-1.0)))).epsilon(1e-14));
}

TEST_CASE("batch generator edge probabilities") {
  RareTriggerConfig cfg;
  cfg.p_trigger = 0.0;
  cfg.token_max = 254;
  Rng rng(1);
  const auto none = gen_rare_trigger_batch(rng, cfg, 2000);
  for (int y : none.labels) CHECK(y == 0);

  cfg.p_trigger = 1.0;
  const auto all = gen_rare_trigger_batch(rng, cfg, 2000);
  for (int y : all.labels) CHECK(y == 1);
}

TEST_CASE("batch layout and label consistency") {
  RareTriggerConfig cfg;
  cfg.token_max = 255;
  cfg.p_trigger = 0.2;
  Rng rng(2);
  const auto b = gen_rare_trigger_batch(rng, cfg, 1000);
  CHECK(b.width == cfg.len_max);
  CHECK(b.rows == 1000);
  for (int i = 0; i < b.rows; ++i) {
    const int len = b.lengths[i];
    CHECK(len >= cfg.len_min);
    CHECK(len <= cfg.len_max);
    bool has_trigger = false;
    for (int j = 0; j < b.width; ++j) {
      const int tok = b.token(i, j);
      if (j < len) {
        CHECK(tok >= 1);
        CHECK(tok <= 255);
        has_trigger = has_trigger || tok == cfg.trig_id;
      } else {
        CHECK(tok == cfg.pad_id);
      }
    }
    CHECK(b.labels[i] == static_cast<int>(has_trigger));
  }
}

TEST_CASE("per-step batches are a pure function of seed and step") {
  const RareTriggerConfig cfg;
  const auto a = rare_trigger_step_batch(5, 17, cfg);
  const auto b = rare_trigger_step_batch(5, 17, cfg);
  CHECK(a.tokens == b.tokens);
  CHECK(a.lengths == b.lengths);
  CHECK(a.labels == b.labels);
  CHECK(rare_trigger_step_batch(5, 18, cfg).tokens != a.tokens);
  CHECK(rare_trigger_step_batch(6, 17, cfg).tokens != a.tokens);
}

TEST_CASE("label rate with the default token range") {
  const RareTriggerConfig cfg;
  REQUIRE(cfg.token_max == 254);
  Rng rng(3);
  const auto b = gen_rare_trigger_batch(rng, cfg, 100000);
  double positives = 0;
  for (int y : b.labels) positives += y;
  const double rate = positives / b.rows;
  CHECK(rate >= 0.008);
  CHECK(rate <= 0.013);
}

TEST_CASE("forward pass examples") {
  RareTriggerConfig cfg;
  auto model = rare_trigger_init<double>(cfg, 0);
  Rng rng(4);
  const auto batch = gen_rare_trigger_batch(rng, cfg, 16);

  auto zero = model;
  for (auto& x : zero.at("embed/E")) x = 0.0;
  zero.at("head/b")[0] = 0.3;
  for (double z : rare_trigger_forward(zero, batch)) CHECK(z == 0.3);

  const auto single = manual_batch({{42}}, 4);
  double dot = 0.0;
  for (int k = 0; k < cfg.embed_dim; ++k) dot += model.at("embed/E")[42 * cfg.embed_dim + k] * model.at("head/w")[k];
  CHECK(rare_trigger_forward(model, single)[0] == doctest::Approx(dot + model.at("head/b")[0]).epsilon(1e-14));

  const auto once = manual_batch({{3, 9, 255, 17}}, 8);
  const auto twice = manual_batch({{3, 9, 255, 17, 3, 9, 255, 17}}, 8);
  CHECK(rare_trigger_forward(model, once)[0] == doctest::Approx(rare_trigger_forward(model, twice)[0]).epsilon(1e-14));

  auto empty = manual_batch({{1}}, 4);
  empty.lengths[0] = 0;
  CHECK_THROWS_AS(rare_trigger_forward(model, empty), ConfigError);
}

TEST_CASE("rare trigger gradient examples") {
  RareTriggerConfig cfg;
  auto model = rare_trigger_init<double>(cfg, 1);
  Rng rng(5);
  const auto batch = gen_rare_trigger_batch(rng, cfg, 4);

  ParamTree<double> grad;
  rare_trigger_grad(model, batch, grad);
  const auto fd = finite_diff_grad<double>(
      [&](const ParamTree<double>& p) { return bce_with_logits(rare_trigger_forward(p, batch), batch.labels); },
      model, 1e-6);
  CHECK(rel_err(grad, fd) <= 1e-5);

  std::vector<bool> present(static_cast<std::size_t>(cfg.vocab), false);
  for (int i = 0; i < batch.rows; ++i) {
    for (int j = 0; j < batch.lengths[i]; ++j) present[static_cast<std::size_t>(batch.token(i, j))] = true;
  }
  const auto& ge = grad.at("embed/E");
  for (int v = 0; v < cfg.vocab; ++v) {
    if (present[static_cast<std::size_t>(v)]) continue;
    for (int k = 0; k < cfg.embed_dim; ++k) CHECK(ge[static_cast<std::size_t>(v * cfg.embed_dim + k)] == 0.0);
  }

  // Saturated correct predictions: push the bias far toward every label.
  auto sure = manual_batch({{1, 2, 3}, {4, 5}}, 4);
  auto m2 = model;
  m2.at("head/b")[0] = -60.0;
  CHECK(rare_trigger_grad(m2, sure, grad) < 1e-20);
  double worst = 0.0;
  for (const auto& [_, t] : grad) {
    for (double x : t) worst = std::max(worst, std::abs(x));
  }
  CHECK(worst < 1e-20);
}

TEST_CASE("rare trigger gradient matches finite differences over 100 cases") {
  const auto cfg = small_rt();
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto model = rare_trigger_init<double>(cfg, seed);
    Rng rng(derive_seed(seed, 99));
    const auto batch = gen_rare_trigger_batch(rng, cfg);
    ParamTree<double> grad;
    rare_trigger_grad(model, batch, grad);
    const auto fd = finite_diff_grad<double>(
        [&](const ParamTree<double>& p) { return bce_with_logits(rare_trigger_forward(p, batch), batch.labels); },
        model, 1e-6);
    CAPTURE(seed);
    CHECK(rel_err(grad, fd) <= 1e-5);
  }
}

TEST_CASE("toy gradients match finite differences over 100 seeds") {
  for (auto base : {ToyConfig::sanity1(), ToyConfig::sanity2(), ToyConfig::sanity3()}) {
    base.samples = 24;
    base.features = 4;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      ToyProblem<double> prob(base, seed);
      auto params = prob.init_params();
      Rng rng(derive_seed(seed, 7));
      for (auto& [_, t] : params) {
        for (auto& x : t) x = rng.normal();
      }
      ParamTree<double> grad;
      prob.loss_and_grad(params, 1, grad);
      const auto fd = finite_diff_grad<double>([&](const ParamTree<double>& p) { return prob.loss(p, 1); },
                                               params, 1e-6);
      CAPTURE(seed);
      CHECK(rel_err(grad, fd) <= 1e-5);
    }
  }
}

TEST_CASE("least squares at the generating weights without noise") {
  auto cfg = ToyConfig::sanity1();
  cfg.noise = 0.0;
  cfg.init = "truth";
  ToyProblem<double> prob(cfg, 3);
  ParamTree<double> grad;
  CHECK(prob.loss_and_grad(prob.init_params(), 1, grad) < 1e-28);
  for (const auto& [_, t] : grad) {
    for (double x : t) CHECK(std::abs(x) < 1e-14);
  }
}

TEST_CASE("least squares is convex along random lines") {
  ToyProblem<double> prob(ToyConfig::sanity1(), 4);
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    auto a = prob.init_params();
    auto b = a;
    auto mid = a;
    for (auto& [path, t] : a) {
      for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = 3.0 * rng.normal();
        b.at(path)[i] = 3.0 * rng.normal();
        mid.at(path)[i] = 0.5 * (t[i] + b.at(path)[i]);
      }
    }
    CHECK(prob.loss(mid, 1) <= 0.5 * (prob.loss(a, 1) + prob.loss(b, 1)) + 1e-12);
  }
}

TEST_CASE("logistic loss is symmetric under label flip and weight negation") {
  const auto cfg = ToyConfig::sanity2();
  auto data = make_toy_data(cfg, 5);
  Rng rng(7);
  const auto w = rng_normal(rng, static_cast<std::size_t>(cfg.features));
  const double b = rng.normal();
  const double before = toy_loss(data, ToyKind::logistic, w, b, nullptr, nullptr);
  for (auto& y : data.y) y = 1.0 - y;
  std::vector<double> neg(w);
  for (auto& x : neg) x = -x;
  CHECK(toy_loss(data, ToyKind::logistic, neg, -b, nullptr, nullptr) == doctest::Approx(before).epsilon(1e-14));
}

TEST_CASE("classifier data respect the margin and are separable") {
  const auto cfg = ToyConfig::sanity2();
  const auto data = make_toy_data(cfg, 8);
  CHECK(toy_accuracy(data, data.w_true, data.b_true) == 1.0);
  double w_norm = 0.0;
  for (double x : data.w_true) w_norm += x * x;
  w_norm = std::sqrt(w_norm);
  for (int i = 0; i < data.n; ++i) {
    double z = data.b_true;
    for (int k = 0; k < data.d; ++k) z += data.x[static_cast<std::size_t>(i * data.d + k)] * data.w_true[k];
    CHECK(std::abs(z) >= cfg.margin * w_norm);
  }
}

TEST_CASE("concave utility shares the logistic objective") {
  auto c2 = ToyConfig::sanity2();
  auto c3 = ToyConfig::sanity3();
  c3.samples = c2.samples;
  c3.features = c2.features;
  const auto d = make_toy_data(c3, 9);
  Rng rng(10);
  const auto w = rng_normal(rng, static_cast<std::size_t>(d.d));
  CHECK(toy_loss(d, ToyKind::concave_utility, w, 0.2, nullptr, nullptr) ==
        toy_loss(d, ToyKind::logistic, w, 0.2, nullptr, nullptr));
}

TEST_CASE("testbed factory and overrides") {
  for (const auto& name : testbed_names()) {
    auto tb = make_testbed<double>(name, 0);
    CHECK(tb->name() == name);
    CHECK(tb->default_steps() > 0);
    CHECK(tb->default_lr() > 0.0);
  }
  CHECK(make_testbed<double>("sanity1", 0)->default_steps() == 10000);
  CHECK(make_testbed<double>("sanity2", 0)->default_steps() == 20000);
  CHECK(make_testbed<double>("sanity3", 0)->default_steps() == 50000);
  auto rt = make_testbed<float>("rare_trigger", 0);
  CHECK(rt->default_steps() == 30000);
  CHECK(rt->default_lr() == 1e-2);
  CHECK(rt->default_untimed_steps() == 10);

  auto patched = make_testbed<double>("rare_trigger", 0, {{"batch", 8}, {"steps", 5}});
  CHECK(patched->config_json().at("batch") == 8);
  CHECK(patched->default_steps() == 5);

  CHECK_THROWS_AS(make_testbed<double>("heat2d", 0), ConfigError);
  CHECK_THROWS_AS(make_testbed<double>("rare_trigger", 0, {{"no_such_field", 1}}), ConfigError);
  CHECK_THROWS_AS(make_testbed<double>("rare_trigger", 0, {{"pad_id", 255}}), ConfigError);
  CHECK_THROWS_AS(make_testbed<double>("sanity1", 0, {{"init", "random"}}), ConfigError);
}

TEST_CASE("testbed configs round-trip through json") {
  auto rt = small_rt();
  rt.eval_seed = 77;
  const auto back = RareTriggerConfig::from_json(rt.to_json());
  CHECK(back.to_json() == rt.to_json());
  auto toy = ToyConfig::sanity3();
  toy.margin = 0.25;
  CHECK(ToyConfig::from_json(toy.to_json(), ToyConfig::sanity3()).to_json() == toy.to_json());
  CHECK_THROWS_AS(ToyConfig::from_json(toy.to_json(), ToyConfig::sanity1()), ConfigError);
  CHECK_THROWS_AS(RareTriggerConfig::from_json({{"batch", "many"}}), ConfigError);
}
