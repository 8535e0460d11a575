#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace nlens {

// xoshiro256** seeded through splitmix64. Every draw helper below is
// implemented here rather than through <random> distributions, whose output
// is implementation-defined, so that a seed produces the same stream on every
// platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform();

  // Uniform integer in [0, bound). Lemire's multiply-shift with rejection.
  std::uint64_t below(std::uint64_t bound);

  // Standard normal via Box-Muller; the spare value is cached.
  double normal();

  // Index drawn from a discrete distribution with non-negative weights.
  std::size_t categorical(std::span<const double> weights);

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::uint64_t state_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state);

// Derives an independent stream seed from a base seed and a salt.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt);

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t hash = 0xcbf29ce484222325ULL);

}  // namespace nlens
