#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace simba {

// Seedable 64-bit generator. Distributions are implemented here rather than
// with <random> distributions so that streams are identical across standard
// library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  // Independent substream keyed by name; depends only on the seed, not on how
  // many numbers this generator has already produced.
  Rng fork(std::string_view name) const;

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  double normal();
  double normal(double mean, double stddev);
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p);

  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace simba
