#pragma once

#include <cstdint>
#include <random>

namespace cgdm {

/// Seedable generator with deterministic child streams. A child is keyed by
/// (parent seed, stream id) through splitmix64, so a per-partition or
/// per-projection stream does not depend on how many draws the parent made.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }
  Rng child(std::uint64_t stream) const;

  double normal();
  double uniform();  // [0, 1)
  std::uint64_t next_u64();
  std::uint64_t below(std::uint64_t bound);  // uniform in [0, bound)

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace cgdm
