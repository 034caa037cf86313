#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dyfn {

/// Derives a named sub-seed: hash(seed, purpose, index). SplitMix64 finalizer
/// over an FNV-1a hash of the purpose string.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose,
                          std::uint64_t index = 0) noexcept;

/// mt19937_64 with platform-independent uniform/normal conversions.
/// std::uniform_real_distribution and std::normal_distribution are not
/// specified bit-exactly, so the conversions are done here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform();                         // [0, 1)
  double uniform(double lo, double hi);     // [lo, hi)
  double normal();                          // standard normal, Box-Muller
  std::size_t index(std::size_t n);         // uniform in [0, n)

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dyfn
