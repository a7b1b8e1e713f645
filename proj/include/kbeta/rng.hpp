#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace kbeta {

/// splitmix64 finalizer; also used to derive per-step stream seeds.
std::uint64_t splitmix64(std::uint64_t x);

/// Seed for the stream identified by (base_seed, stream_id). Pure function.
std::uint64_t derive_seed(std::uint64_t base_seed, std::uint64_t stream_id);

/// xoshiro256** seeded through splitmix64. The output stream depends only on
/// the seed and the call sequence, never on the platform or standard library:
/// integer ranges use Lemire's rejection method and normals use Box-Muller.
class Rng {
 public:
  static constexpr const char* kAlgorithm = "xoshiro256ss";

  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }
  std::string algorithm() const { return kAlgorithm; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform on the closed range [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::vector<std::int64_t> rng_uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi,
                                          std::size_t n);
std::vector<double> rng_normal(Rng& rng, std::size_t n);

}  // namespace kbeta
