#include "seedflood/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace seedflood {

namespace {

constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;

inline uint64_t mix64(uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ull;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBull;
  x ^= x >> 31;
  return x;
}

}  // namespace

uint64_t RandomStream::next_raw() {
  ++counter_;
  return mix64(seed_ + counter_ * kGolden);
}

double RandomStream::next_gaussian() {
  ++position_;
  const uint64_t a = next_raw();
  const uint64_t b = next_raw();
  // u1 in (0,1] so the log is finite; u2 in [0,1).
  const double u1 = static_cast<double>((a >> 11) + 1) * 0x1.0p-53;
  const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

uint32_t RandomStream::uniform_index(uint32_t bound) {
  if (bound == 0) {
    throw std::invalid_argument("uniform_index: bound must be >= 1");
  }
  ++position_;
  const unsigned __int128 wide =
      static_cast<unsigned __int128>(next_raw()) * bound;
  return static_cast<uint32_t>(wide >> 64);
}

Seed derive_seed(Seed base, uint64_t salt) {
  return Seed{mix64(base.value ^ mix64(salt * kGolden + 1))};
}

}  // namespace seedflood
