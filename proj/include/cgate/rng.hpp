#pragma once

#include <cstdint>
#include <string_view>

namespace cgate {

// Portable deterministic generator (xoshiro256** seeded through splitmix64).
// All distributions below are implemented here rather than through <random>
// so generated datasets are identical across standard libraries.
class Rng {
 public:
  static constexpr std::string_view kName = "xoshiro256ss-v1";

  explicit Rng(std::uint64_t seed);

  // Independent stream derived from (seed, stream id).
  static Rng derive(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal(double mean = 0.0, double stddev = 1.0);
  double lognormal(double log_mean, double log_std);
  double exponential(double mean);
  bool bernoulli(double p);
  std::uint32_t poisson(double lambda);
  // Index drawn proportionally to weights[0..n).
  std::size_t categorical(const double* weights, std::size_t n);

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace cgate
