#pragma once

#include <cstdint>
#include <random>

namespace mixtraffic {

/// Seeded generator for one subsystem. Streams derived from the same run seed
/// are independent, so enabling one subsystem never perturbs another's draws.
class Rng {
public:
  Rng() : Rng(0, 0) {}
  Rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    engine_.seed(seq);
  }

  /// Uniform in [0, 1) with 53 bits, identical on every platform.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  std::uint64_t next() { return engine_(); }

  bool operator==(const Rng&) const = default;

private:
  std::mt19937_64 engine_;
};

enum RngStream : std::uint64_t { kSpawnStream = 1, kRoutingStream = 2 };

}  // namespace mixtraffic
