#pragma once

#include <cstddef>
#include <cstdint>

namespace seedflood {

/// 64-bit seed identifying a reproducible random stream. Equal seeds give
/// bit-identical streams on every client of the same build.
struct Seed {
  uint64_t value = 0;

  friend bool operator==(Seed a, Seed b) { return a.value == b.value; }
};

/// Counter-based deterministic stream (splitmix64). The k-th raw draw is a
/// pure function of (seed, k), so there is no shared or global state and
/// interleaved streams never perturb each other.
///
/// Distribution transforms are fixed and consume a data-independent number
/// of raw draws, keeping stream positions predictable from the draw plan:
///   - gaussian: Box-Muller, exactly two raw draws per value
///   - uniform_index: multiply-high range reduction, exactly one raw draw
///     (modulo-free; residual bias below 2^-32 for bounds up to 2^32)
class RandomStream {
 public:
  explicit RandomStream(Seed seed) : seed_(seed.value) {}

  /// Raw 64-bit draw.
  uint64_t next_u64() {
    ++position_;
    return next_raw();
  }

  /// Uniform double in [0, 1), 53-bit resolution.
  double next_unit() {
    ++position_;
    return static_cast<double>(next_raw() >> 11) * 0x1.0p-53;
  }

  /// Standard Gaussian via Box-Muller on a fixed pair of raw draws.
  double next_gaussian();

  /// Uniform integer in [0, bound). Throws std::invalid_argument on bound=0.
  uint32_t uniform_index(uint32_t bound);

  /// Count of values emitted so far (one per call, any distribution).
  uint64_t position() const { return position_; }

  Seed seed() const { return Seed{seed_}; }

 private:
  uint64_t next_raw();

  uint64_t seed_;
  uint64_t counter_ = 0;   // raw draws consumed; indexes the counter sequence
  uint64_t position_ = 0;  // values emitted
};

inline RandomStream stream_from_seed(Seed seed) { return RandomStream(seed); }

/// Stateless mix for deriving sub-seeds from a base seed and a salt.
/// Used to give clients, tasks, and parameter init disjoint streams.
Seed derive_seed(Seed base, uint64_t salt);

}  // namespace seedflood
