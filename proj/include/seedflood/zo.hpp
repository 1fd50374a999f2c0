#pragma once

#include <cmath>
#include <cstdint>
#include <type_traits>
#include <utility>
#include <vector>

#include "seedflood/errors.hpp"
#include "seedflood/rng.hpp"
#include "seedflood/subcge.hpp"
#include "seedflood/tensor.hpp"

namespace seedflood {

enum class PerturbKind { FullGaussian, SubCge };

/// A perturbation direction, reconstructible from (kind, seed) plus the
/// shared basis of the recorded epoch; never stored densely between uses.
///
/// Replay layout is fixed: a fresh stream seeded with `seed` walks the
/// layers in model order. For kind SubCge a 2D layer consumes two uniform
/// indices (i then j) and a 1D layer consumes one Gaussian per element;
/// for kind FullGaussian every layer consumes one Gaussian per element.
struct Perturbation {
  PerturbKind kind = PerturbKind::FullGaussian;
  Seed seed;
  double epsilon = 1e-3;
  int64_t epoch = 0;                // SubCge: epoch of the sampling basis
  std::vector<LayerCoord> coords;   // SubCge: cached coordinates, 2D layers
};

/// One zeroth-order update before wire folding.
struct ZOUpdate {
  Seed seed;
  double alpha = 0.0;
  uint32_t origin = 0;
  uint32_t iteration = 0;
};

inline Perturbation sample_full_gaussian(Seed seed, double epsilon) {
  return Perturbation{PerturbKind::FullGaussian, seed, epsilon, 0, {}};
}

/// Walk the message stream once to extract the canonical coordinates; 1D
/// layer segments are drawn and discarded so the layout stays uniform.
template <typename T>
Perturbation sample_canonical_perturbation(Seed seed,
                                           const SubspaceBasis<T>& basis,
                                           std::span<const LayerShape> shapes,
                                           double epsilon) {
  Perturbation pert{PerturbKind::SubCge, seed, epsilon, basis.epoch, {}};
  RandomStream stream = stream_from_seed(seed);
  for (const auto& s : shapes) {
    if (s.is_matrix()) {
      LayerCoord c;
      c.i = stream.uniform_index(basis.rank);
      c.j = stream.uniform_index(basis.rank);
      pert.coords.push_back(c);
    } else {
      for (size_t k = 0; k < s.size(); ++k) stream.next_gaussian();
    }
  }
  return pert;
}

/// Add scale * z to `params` densely, regenerating z from the seed. For
/// SubCge the 2D part is the rank-1 outer product against `basis` (which
/// must match the perturbation's epoch).
template <typename T>
void apply_perturbation_dense(ModelParams<T>& params, const Perturbation& pert,
                              std::type_identity_t<const SubspaceBasis<T>*> basis,
                              double scale, uint64_t* madds = nullptr) {
  RandomStream stream = stream_from_seed(pert.seed);
  uint64_t count = 0;
  if (pert.kind == PerturbKind::FullGaussian) {
    for (auto& layer : params.layers) {
      for (auto& w : layer.data) {
        w += static_cast<T>(scale * stream.next_gaussian());
      }
      count += layer.size();
    }
  } else {
    if (basis == nullptr || basis->epoch != pert.epoch) {
      throw EpochMismatchError("apply_perturbation_dense: stale epoch");
    }
    size_t ordinal = 0;
    for (size_t l = 0; l < params.layers.size(); ++l) {
      auto& layer = params.layers[l];
      if (layer.shape.is_matrix()) {
        const uint32_t i = stream.uniform_index(basis->rank);
        const uint32_t j = stream.uniform_index(basis->rank);
        const auto& u = basis->u[ordinal];
        const auto& v = basis->v[ordinal];
        for (size_t a = 0; a < layer.shape.rows; ++a) {
          const T lhs = static_cast<T>(scale) * u.at(a, i);
          for (size_t b = 0; b < layer.shape.cols; ++b) {
            layer.at(a, b) += lhs * v.at(b, j);
          }
        }
        count += layer.size() + layer.shape.rows;
        ++ordinal;
      } else {
        for (auto& w : layer.data) {
          w += static_cast<T>(scale * stream.next_gaussian());
        }
        count += layer.size();
      }
    }
  }
  if (madds) *madds += count;
}

/// Saved unperturbed state of everything a perturbation session touches.
/// Every perturbed state is recomputed from this base with one addition, so
/// returning to net zero restores the exact starting bits; chaining
/// floating-point adds and subtracts would not be an exact inverse.
template <typename T>
struct PerturbUndo {
  bool active = false;
  int net = 0;  // current multiple of eps*z applied
  std::vector<T> saved_coords;  // per 2D-layer ordinal: old A[i,j]
  std::vector<std::pair<size_t, std::vector<T>>> saved_layers;
};

enum class PerturbSign { Plus = +1, Minus = -1, Reset = 0 };

/// params <- params + sign*eps*z, replayed from the seed. For SubCge the 2D
/// component is routed into the coordinate buffer (A[i,j] += sign*eps),
/// leaving base weights untouched; 1D layers and FullGaussian perturbations
/// mutate the dense parameters. Reset restores the exact pre-session bits
/// and ends the session.
template <typename T>
void perturb_in_place(ModelParams<T>& params,
                      std::type_identity_t<CoordBuffer<T>*> buffer,
                      const Perturbation& pert, PerturbSign sign,
                      PerturbUndo<T>& undo) {
  const bool subcge = pert.kind == PerturbKind::SubCge;
  if (subcge) {
    if (buffer == nullptr) {
      throw std::invalid_argument("perturb_in_place: SubCge needs a buffer");
    }
    if (buffer->epoch != pert.epoch) {
      throw EpochMismatchError("perturb_in_place: stale epoch");
    }
  }

  if (!undo.active) {
    if (sign == PerturbSign::Reset) return;
    if (subcge) {
      for (size_t ordinal = 0; ordinal < pert.coords.size(); ++ordinal) {
        const auto& c = pert.coords[ordinal];
        undo.saved_coords.push_back(buffer->a[ordinal].at(c.i, c.j));
      }
      for (size_t l = 0; l < params.layers.size(); ++l) {
        if (!params.layers[l].shape.is_matrix()) {
          undo.saved_layers.emplace_back(l, params.layers[l].data);
        }
      }
    } else {
      for (size_t l = 0; l < params.layers.size(); ++l) {
        undo.saved_layers.emplace_back(l, params.layers[l].data);
      }
    }
    undo.active = true;
    undo.net = 0;
  }

  // Return to the saved base, then lay down the new net multiple in one
  // addition per element.
  for (size_t ordinal = 0; ordinal < undo.saved_coords.size(); ++ordinal) {
    const auto& c = pert.coords[ordinal];
    buffer->a[ordinal].at(c.i, c.j) = undo.saved_coords[ordinal];
  }
  for (const auto& [idx, data] : undo.saved_layers) {
    params.layers[idx].data = data;
  }

  undo.net = (sign == PerturbSign::Reset) ? 0 : undo.net + static_cast<int>(sign);
  const double step = undo.net * pert.epsilon;

  if (step != 0.0) {
    if (subcge) {
      for (size_t ordinal = 0; ordinal < pert.coords.size(); ++ordinal) {
        const auto& c = pert.coords[ordinal];
        buffer->a[ordinal].at(c.i, c.j) += static_cast<T>(step);
      }
      buffer->dirty = true;
      RandomStream stream = stream_from_seed(pert.seed);
      for (auto& layer : params.layers) {
        if (layer.shape.is_matrix()) {
          stream.uniform_index(buffer->rank);
          stream.uniform_index(buffer->rank);
        } else {
          for (auto& w : layer.data) {
            w += static_cast<T>(step * stream.next_gaussian());
          }
        }
      }
    } else {
      RandomStream stream = stream_from_seed(pert.seed);
      for (auto& layer : params.layers) {
        for (auto& w : layer.data) {
          w += static_cast<T>(step * stream.next_gaussian());
        }
      }
    }
  }

  if (sign == PerturbSign::Reset) undo = PerturbUndo<T>{};
}

/// Symmetric two-point rule: (f(theta+eps z) - f(theta-eps z)) / (2 eps).
/// `loss_fn` evaluates the current (params, buffer) state. Parameters and
/// buffer are restored bit-exactly on exit, also on error.
template <typename T, typename LossFn>
double two_point_alpha(ModelParams<T>& params,
                       std::type_identity_t<CoordBuffer<T>*> buffer,
                       const Perturbation& pert, LossFn&& loss_fn) {
  PerturbUndo<T> undo;
  double loss_plus = 0.0, loss_minus = 0.0;
  try {
    perturb_in_place(params, buffer, pert, PerturbSign::Plus, undo);
    loss_plus = loss_fn();
    perturb_in_place(params, buffer, pert, PerturbSign::Minus, undo);
    perturb_in_place(params, buffer, pert, PerturbSign::Minus, undo);
    loss_minus = loss_fn();
  } catch (...) {
    perturb_in_place(params, buffer, pert, PerturbSign::Reset, undo);
    throw;
  }
  perturb_in_place(params, buffer, pert, PerturbSign::Reset, undo);
  const double alpha = (loss_plus - loss_minus) / (2.0 * pert.epsilon);
  if (!std::isfinite(alpha)) {
    throw NumericOverflowError("two_point_alpha: non-finite alpha");
  }
  return alpha;
}

}  // namespace seedflood
