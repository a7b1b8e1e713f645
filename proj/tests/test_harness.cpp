#include <doctest.h>

#include <sstream>

#include "kbeta/harness.hpp"

using namespace kbeta;

namespace {

RunConfig short_run(const std::string& testbed, const std::string& opt, std::int64_t steps) {
  RunConfig cfg;
  cfg.testbed = testbed;
  cfg.optimizer = optimizer_preset(opt, testbed);
  cfg.steps = steps;
  return cfg;
}

nlohmann::json without_wall(nlohmann::json j) {
  j.erase("wall_seconds");
  return j;
}

const nlohmann::json kTinyTrigger{{"batch", 8}, {"embed_dim", 8}, {"len_min", 4}, {"len_max", 12},
                                  {"p_trigger", 0.2}, {"eval_samples", 64}};

}  // namespace

TEST_CASE("precision and preset parsing") {
  CHECK(parse_precision("f32") == Precision::f32);
  CHECK(parse_precision("f64") == Precision::f64);
  CHECK_THROWS_AS(parse_precision("bf16"), ConfigError);
  CHECK_THROWS_AS(optimizer_preset("sgd", "sanity1"), ConfigError);

  const auto k = optimizer_preset("kbeta", "rare_trigger");
  CHECK_FALSE(k.is_adam);
  CHECK(k.kbeta.bias_correction == BiasCorrection::beta2max);
  CHECK(k.kbeta.warmup_steps == 50);
  CHECK(k.kbeta.decay == 0.0);
  CHECK(optimizer_preset("adam95", "rare_trigger").adam.beta2 == 0.95);
  CHECK(optimizer_preset("adam999", "rare_trigger").adam.bias_correction);

  const auto fixed = optimizer_preset("kbeta_fixed", "sanity2");
  CHECK(fixed.kbeta.beta2_min == fixed.kbeta.beta2_max);
  CHECK(fixed.kbeta.bias_correction == BiasCorrection::none);
  CHECK_FALSE(optimizer_preset("adam999", "sanity2").adam.bias_correction);
}

TEST_CASE("optimizer spec and run config round-trip") {
  for (const char* label : {"kbeta", "kbeta_fixed", "adam95", "adam999"}) {
    const auto s = optimizer_preset(label, "rare_trigger");
    const auto back = OptimizerSpec::from_json(s.to_json());
    CHECK(back.to_json() == s.to_json());
  }
  RunConfig cfg = short_run("rare_trigger", "kbeta", 12);
  cfg.testbed_overrides = kTinyTrigger;
  cfg.lr_schedule = parse_schedule("1:1e-2,5:1e-3");
  cfg.eval_every = 4;
  cfg.precision = Precision::f32;
  cfg.check_second_moment_bound = true;
  CHECK(RunConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());
}

TEST_CASE("runs are deterministic apart from wall time") {
  auto cfg = short_run("rare_trigger", "kbeta", 40);
  cfg.testbed_overrides = kTinyTrigger;
  cfg.eval_every = 10;
  const auto a = run_experiment(cfg);
  const auto b = run_experiment(cfg);
  CHECK(without_wall(a.to_json()) == without_wall(b.to_json()));
  CHECK(a.final_params == b.final_params);
  CHECK(a.config.at("testbed_config").at("batch") == 8);
}

TEST_CASE("series is increasing and agrees with the final metrics") {
  auto cfg = short_run("sanity2", "kbeta", 25);
  cfg.eval_every = 10;
  const auto r = run_experiment(cfg);
  REQUIRE(r.series.size() == 4);
  CHECK(r.series[0].step == 0);
  CHECK(r.series[1].step == 10);
  CHECK(r.series[3].step == 25);
  CHECK(r.final_loss == r.series.back().loss);
  CHECK(r.final_accuracy == r.series.back().accuracy);
  CHECK(r.last_finite_step == 25);
  CHECK_FALSE(r.diverged);
}

TEST_CASE("zero steps report the initial loss only") {
  const auto r = run_experiment(short_run("sanity1", "kbeta", 0));
  REQUIRE(r.series.size() == 1);
  CHECK(r.series[0].step == 0);
  CHECK(r.final_loss == r.series[0].loss);
  CHECK(r.steps == 0);
}

TEST_CASE("divergence is reported, not thrown") {
  auto cfg = short_run("sanity1", "adam999", 10);
  cfg.lr = 1e200;
  const auto r = run_experiment(cfg);
  CHECK(r.diverged);
  CHECK(r.last_finite_step < 10);
  CHECK(std::isnan(r.final_loss));
  const auto back = RunReport::from_json(r.to_json());
  CHECK(back.diverged);
  CHECK(std::isnan(back.final_loss));
}

TEST_CASE("reports round-trip through json") {
  auto cfg = short_run("sanity2", "kbeta", 30);
  cfg.eval_every = 7;
  cfg.check_second_moment_bound = true;
  const auto r = run_experiment(cfg);
  const auto back = RunReport::from_json(r.to_json());
  CHECK(back.to_json() == r.to_json());
  CHECK(back.series == r.series);
  CHECK(back.bound == r.bound);
}

TEST_CASE("schedules drive the step size") {
  auto flat = short_run("sanity1", "adam999", 20);
  flat.lr = 1e-3;
  auto sched = flat;
  sched.lr_schedule = parse_schedule("1:1e-3");
  CHECK(run_experiment(flat).final_params == run_experiment(sched).final_params);
  sched.lr_schedule = parse_schedule("1:1e-3,10:1e-4");
  CHECK(run_experiment(flat).final_params != run_experiment(sched).final_params);
  sched.lr_schedule = parse_schedule("5:1e-3");
  CHECK_THROWS_AS(run_experiment(sched), ConfigError);
}

TEST_CASE("the second-moment bound holds on short runs") {
  for (const char* tb : {"sanity1", "sanity2", "rare_trigger"}) {
    for (const char* opt : {"kbeta", "adam999"}) {
      auto cfg = short_run(tb, opt, 60);
      if (std::string(tb) == "rare_trigger") cfg.testbed_overrides = kTinyTrigger;
      cfg.check_second_moment_bound = true;
      const auto r = run_experiment(cfg);
      REQUIRE(r.bound);
      CHECK(r.bound->checked_steps == 59);
      CHECK(r.bound->violations == 0);
      CHECK(r.bound->max_ratio <= 1.0 + 1e-9);
    }
  }
}

TEST_CASE("sweep shapes, paired stats and win counts") {
  SweepConfig sc;
  sc.base = short_run("rare_trigger", "kbeta", 30);
  sc.base.testbed_overrides = kTinyTrigger;
  sc.seeds = {0, 1, 2, 3};
  for (const char* l : {"kbeta", "adam95", "adam999"}) sc.optimizers.push_back(optimizer_preset(l, "rare_trigger"));
  sc.tau = 10.0;
  sc.threads = 2;
  const auto rep = seed_sweep(sc);
  CHECK(rep.runs.size() == 12);
  REQUIRE(rep.comparisons.size() == 2);
  for (const auto& c : rep.comparisons) {
    CHECK(c.candidate == "kbeta");
    std::int64_t wins = 0;
    for (auto s : c.seeds) {
      wins += std::log10(rep.run(c.baseline, s).final_loss) > std::log10(rep.run("kbeta", s).final_loss);
    }
    CHECK(c.wins == wins);
    CHECK(c.holm_paired_t.has_value());
  }
  CHECK(rep.successes.at("kbeta") == 4);

  // Same cell run outside the sweep gives the same numbers.
  auto solo = sc.base;
  solo.seed = 2;
  solo.optimizer = sc.optimizers[1];
  CHECK(run_experiment(solo).param_digest == rep.run("adam95", 2).param_digest);

  std::ostringstream csv;
  write_sweep_csv(csv, rep);
  const std::string text = csv.str();
  CHECK(text.rfind("testbed,optimizer,seed,final_loss", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 13);
}

TEST_CASE("single seed and identical optimizers yield notices") {
  SweepConfig sc;
  sc.base = short_run("sanity1", "kbeta", 10);
  sc.seeds = {0};
  sc.optimizers = {optimizer_preset("kbeta", "sanity1"), optimizer_preset("adam999", "sanity1")};
  const auto one = seed_sweep(sc);
  CHECK(one.comparisons.empty());
  CHECK_FALSE(one.notices.empty());

  sc.seeds = {0, 1, 2};
  auto twin = optimizer_preset("adam999", "sanity1");
  twin.label = "adam999_twin";
  sc.optimizers = {optimizer_preset("adam999", "sanity1"), twin};
  const auto same = seed_sweep(sc);
  REQUIRE(same.comparisons.size() == 1);
  const auto& c = same.comparisons[0];
  for (double d : c.log10_diffs) CHECK(d == 0.0);
  CHECK(c.wins == 0);
  CHECK_FALSE(c.paired_t.has_value());
  CHECK(c.notices.size() >= 3);

  sc.seeds = {1, 1};
  CHECK_THROWS_AS(seed_sweep(sc), ConfigError);
  sc.seeds = {1, 2};
  sc.optimizers = {twin, twin};
  CHECK_THROWS_AS(seed_sweep(sc), ConfigError);
}

TEST_CASE("equivalence control") {
  CHECK(equivalence_check(1000, Precision::f64).max() <= 1e-12);
  CHECK(equivalence_check(1000, Precision::f32).max() <= 1e-6);
  const auto still = equivalence_check(1, Precision::f64, 0, {{"noise", 0.0}, {"init", "truth"}});
  CHECK(still.bc_off == 0.0);
  CHECK(still.bc_on == 0.0);
  CHECK_THROWS_AS(equivalence_check(0, Precision::f64), ConfigError);
}

TEST_CASE("fnv1a digest reference values") {
  CHECK(fnv1a_hex("", 0) == "cbf29ce484222325");
  CHECK(fnv1a_hex("a", 1) == "af63dc4c8601ec8c");
}
