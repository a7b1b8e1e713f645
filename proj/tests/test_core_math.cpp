#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kbeta/rng.hpp"
#include "kbeta/tensor.hpp"

using namespace kbeta;

namespace {

ParamTree<double> scalar_tree(std::initializer_list<std::pair<const char*, double>> items) {
  ParamTree<double> t;
  for (auto [k, v] : items) t.emplace(k, Tensor<double>::vector({v}));
  return t;
}

}  // namespace

TEST_CASE("tensor construction checks shape and length") {
  CHECK(Tensor<double>(Shape{2, 3}).size() == 6);
  CHECK_THROWS_AS(Tensor<double>(Shape{2, 0}), ConfigError);
  CHECK_THROWS_AS(Tensor<double>(Shape{2, 2}, std::vector<double>{1, 2, 3}), ConfigError);
  Tensor<float> t(Shape{2}, std::vector<float>{1.f, std::nanf("")});
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("pooled_l2_norm examples") {
  CHECK(pooled_l2_norm(std::vector<Tensor<double>>{Tensor<double>(Shape{3}), Tensor<double>(Shape{2})}) == 0.0);
  CHECK(pooled_l2_norm(std::vector<Tensor<double>>{Tensor<double>::vector({3, 4})}) == 5.0);
  CHECK(pooled_l2_norm(std::vector<Tensor<double>>{Tensor<double>::vector({1, 2}), Tensor<double>::vector({2})}) ==
        doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("pooled_l2_norm rejects non-finite and empty input") {
  std::vector<Tensor<double>> bad{Tensor<double>::vector({1.0, INFINITY})};
  CHECK_THROWS_WITH_AS(pooled_l2_norm(bad), "non-finite gradient", NonFiniteError);
  CHECK_THROWS_AS(pooled_l2_norm(std::vector<Tensor<double>>{}), ConfigError);
}

TEST_CASE("pooled_l2_norm is permutation invariant and homogeneous") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Tensor<double>> ts;
    for (int k = 0; k < 4; ++k) {
      ts.push_back(Tensor<double>::vector(rng_normal(rng, 1 + static_cast<std::size_t>(rng.uniform_int(0, 9)))));
    }
    const double base = pooled_l2_norm(ts);
    std::vector<Tensor<double>> shuffled(ts.rbegin(), ts.rend());
    for (auto& t : shuffled) std::reverse(t.begin(), t.end());
    CHECK(pooled_l2_norm(shuffled) == doctest::Approx(base).epsilon(1e-14));
    const double k = rng.normal() * 10;
    for (auto& t : shuffled) {
      for (auto& x : t) x *= k;
    }
    CHECK(pooled_l2_norm(shuffled) == doctest::Approx(std::abs(k) * base).epsilon(1e-13));
  }
}

TEST_CASE("pooled_l2_norm accumulates float tensors in double") {
  Tensor<float> t(Shape{1000}, 1e-3f);
  CHECK(pooled_l2_norm(std::vector<Tensor<float>>{t}) ==
        doctest::Approx(std::sqrt(1000.0) * static_cast<double>(1e-3f)).epsilon(1e-12));
}

TEST_CASE("finite_diff_grad examples") {
  using Fn = std::function<double(const ParamTree<double>&)>;
  Fn square = [](const ParamTree<double>& p) { return p.at("x")[0] * p.at("x")[0]; };
  CHECK(finite_diff_grad(square, scalar_tree({{"x", 3.0}}), 1e-5).at("x")[0] == doctest::Approx(6.0).epsilon(1e-9));

  Fn constant = [](const ParamTree<double>&) { return 4.0; };
  auto g = finite_diff_grad(constant, scalar_tree({{"a", 1.0}, {"b", -2.0}}));
  CHECK(g.at("a")[0] == 0.0);
  CHECK(g.at("b")[0] == 0.0);

  Fn product = [](const ParamTree<double>& p) { return p.at("x")[0] * p.at("y")[0]; };
  auto gp = finite_diff_grad(product, scalar_tree({{"x", 2.0}, {"y", 5.0}}), 1e-5);
  CHECK(gp.at("x")[0] == doctest::Approx(5.0).epsilon(1e-9));
  CHECK(gp.at("y")[0] == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("finite_diff_grad errors") {
  using Fn = std::function<double(const ParamTree<double>&)>;
  Fn nan_fn = [](const ParamTree<double>&) { return std::nan(""); };
  CHECK_THROWS_AS(finite_diff_grad(nan_fn, scalar_tree({{"x", 1.0}})), NonFiniteError);
  Fn ok = [](const ParamTree<double>&) { return 0.0; };
  CHECK_THROWS_AS(finite_diff_grad(ok, scalar_tree({{"x", 1.0}}), 0.0), ConfigError);
}

TEST_CASE("param tree iterates lexicographically regardless of insertion order") {
  ParamTree<double> a;
  a.emplace("head/w", Tensor<double>(Shape{1}));
  a.emplace("embed/E", Tensor<double>(Shape{1}));
  a.emplace("head/b", Tensor<double>(Shape{1}));
  std::vector<std::string> keys;
  for (const auto& [k, _] : a) keys.push_back(k);
  CHECK(keys == std::vector<std::string>{"embed/E", "head/b", "head/w"});
}

TEST_CASE("rng_uniform_int examples") {
  Rng rng(1);
  CHECK(rng_uniform_int(rng, 7, 7, 3) == std::vector<std::int64_t>{7, 7, 7});
  CHECK_THROWS_AS(rng_uniform_int(rng, 2, 1, 1), ConfigError);

  Rng coin(2);
  const auto draws = rng_uniform_int(coin, 0, 1, 1000000);
  const double mean = std::accumulate(draws.begin(), draws.end(), 0.0) / draws.size();
  CHECK(std::abs(mean - 0.5) < 0.01);

  Rng a(99);
  Rng b(99);
  CHECK(rng_uniform_int(a, -5, 5, 100) == rng_uniform_int(b, -5, 5, 100));
}

TEST_CASE("rng_uniform_int covers the closed range uniformly") {
  Rng rng(3);
  std::vector<int> counts(6, 0);
  for (auto x : rng_uniform_int(rng, 10, 15, 60000)) ++counts[static_cast<std::size_t>(x - 10)];
  for (int c : counts) CHECK(std::abs(c - 10000) < 400);
}

TEST_CASE("rng_normal examples") {
  Rng rng(4);
  CHECK(rng_normal(rng, 0).empty());

  Rng big(5);
  const auto xs = rng_normal(big, 1000000);
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  CHECK(std::abs(ss / (xs.size() - 1) - 1.0) < 0.01);
  CHECK(std::abs(mean) < 0.01);

  Rng a(6);
  Rng b(6);
  CHECK(rng_normal(a, 101) == rng_normal(b, 101));
}

TEST_CASE("rng stream is pinned to the named algorithm") {
  Rng rng(0);
  CHECK(rng.algorithm() == "xoshiro256ss");
  // Independent reference: xoshiro256** with state words splitmix64(k * golden), k = 0..3.
  CHECK(rng.next_u64() == 0x99ec5f36cb75f2b4ull);
  CHECK(rng.next_u64() == 0xbf6e1f784956452aull);
  CHECK(rng.next_u64() == 0x1a5f849d4933e6e0ull);
  CHECK(splitmix64(0) == 0xe220a8397b1dcdafull);
}

TEST_CASE("derive_seed separates streams") {
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
  CHECK(derive_seed(1, 2) != derive_seed(2, 1));
  CHECK(derive_seed(0, 0) != derive_seed(0, 1));
}
