#pragma once

#include <stdexcept>
#include <string>

namespace seedflood {

/// Loss or update arithmetic produced a non-finite value.
struct NumericOverflowError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A message or perturbation refers to a subspace epoch the receiver no
/// longer (or does not yet) hold.
struct EpochMismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Two messages with the same (origin, iteration) id carried different
/// payloads, or a payload field is out of its valid range.
struct CorruptedMessageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidTopologyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidMixingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Configuration parse/validation failure; message carries the key path.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace seedflood
