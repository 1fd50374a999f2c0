#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "seedflood/errors.hpp"
#include "seedflood/rng.hpp"
#include "seedflood/tensor.hpp"

namespace seedflood {

/// Multiply-add counters, split into the gradient-estimation and
/// message-application phases.
struct OpCounters {
  uint64_t ge_madds = 0;   // forward passes and perturbation replays
  uint64_t ma_coord = 0;   // coordinate writes into the r x r buffers
  uint64_t ma_flush = 0;   // dense U A V^T folds into base weights
  uint64_t ma_dense = 0;   // dense per-message applications (1D, stale, naive)

  uint64_t ma_total() const { return ma_coord + ma_flush + ma_dense; }
};

/// One sampled canonical coordinate (i, j) in [0, r)^2 for a 2D layer.
struct LayerCoord {
  uint32_t i = 0;
  uint32_t j = 0;
};

/// Globally shared per-layer random subspace. A pure function of
/// (global seed, epoch start iteration, shapes, rank): every client
/// regenerating it holds bit-identical matrices.
template <typename T>
struct SubspaceBasis {
  int64_t epoch = 0;
  uint32_t rank = 0;
  std::vector<size_t> matrix_layers;  // model indices of the 2D layers
  std::vector<Tensor<T>> u;           // per 2D layer: rows x rank
  std::vector<Tensor<T>> v;           // per 2D layer: cols x rank

  size_t n_matrix_layers() const { return matrix_layers.size(); }
};

/// Per-layer r x r accumulators A. The logical value of 2D layer l is
/// always base_l + U_l A_l V_l^T; 1D layers have no buffer.
template <typename T>
struct CoordBuffer {
  int64_t epoch = 0;
  uint32_t rank = 0;
  std::vector<Tensor<T>> a;  // aligned with basis.matrix_layers
  bool dirty = false;

  static CoordBuffer make(const SubspaceBasis<T>& basis) {
    CoordBuffer buf;
    buf.epoch = basis.epoch;
    buf.rank = basis.rank;
    buf.a.reserve(basis.n_matrix_layers());
    for (size_t l = 0; l < basis.n_matrix_layers(); ++l) {
      buf.a.emplace_back(LayerShape::matrix(basis.rank, basis.rank));
    }
    return buf;
  }
};

/// Coefficient plus per-2D-layer coordinates of one disseminated update.
struct CoordUpdate {
  double coefficient = 0.0;            // eta_t * alpha / n, pre-folded
  std::vector<LayerCoord> coords;      // one per 2D layer, model order
};

/// Draw a fresh basis from seed (global_seed + t). Layers are processed in
/// model order; each 2D layer draws U then V, row-major.
template <typename T>
SubspaceBasis<T> refresh_basis(Seed global_seed, uint64_t t,
                               std::span<const LayerShape> shapes,
                               uint32_t rank, uint64_t tau) {
  if (tau == 0 || t % tau != 0) {
    throw std::invalid_argument("refresh_basis: t must be a multiple of tau");
  }
  if (rank < 1) throw std::invalid_argument("refresh_basis: rank must be >= 1");
  SubspaceBasis<T> basis;
  basis.epoch = static_cast<int64_t>(t / tau);
  basis.rank = rank;
  RandomStream stream = stream_from_seed(Seed{global_seed.value + t});
  for (size_t l = 0; l < shapes.size(); ++l) {
    const auto& s = shapes[l];
    if (!s.is_matrix()) continue;
    if (rank > s.rows || rank > s.cols) {
      throw std::invalid_argument(
          "refresh_basis: rank exceeds a layer dimension");
    }
    basis.matrix_layers.push_back(l);
    const size_t udims[2] = {s.rows, static_cast<size_t>(rank)};
    const size_t vdims[2] = {s.cols, static_cast<size_t>(rank)};
    basis.u.push_back(gaussian_tensor<T>(stream, udims));
    basis.v.push_back(gaussian_tensor<T>(stream, vdims));
  }
  return basis;
}

/// Accumulate messages into the buffers: A_l[i,j] -= v per update per
/// layer, O(1) each, no dense work. Updates are applied in list order;
/// callers pass canonical (iteration, origin) order so that the resulting
/// floating-point sums are bit-identical at every client.
template <typename T>
void accumulate(CoordBuffer<T>& buffer, std::span<const CoordUpdate> updates,
                uint64_t* madds = nullptr) {
  const size_t n_layers = buffer.a.size();
  for (const auto& up : updates) {
    if (up.coords.size() != n_layers) {
      throw CorruptedMessageError("accumulate: coordinate count mismatch");
    }
    for (size_t l = 0; l < n_layers; ++l) {
      const auto [i, j] = up.coords[l];
      if (i >= buffer.rank || j >= buffer.rank) {
        throw CorruptedMessageError("accumulate: coordinate out of range");
      }
      buffer.a[l].at(i, j) -= static_cast<T>(up.coefficient);
    }
  }
  if (!updates.empty()) buffer.dirty = true;
  if (madds) *madds += updates.size() * n_layers;
}

/// Fold the buffers into the base weights (base_l += U_l A_l V_l^T) and
/// zero them. The logical layer values are unchanged.
template <typename T>
void flush(CoordBuffer<T>& buffer, ModelParams<T>& params,
           const SubspaceBasis<T>& basis, uint64_t* madds = nullptr) {
  if (buffer.epoch != basis.epoch) {
    throw EpochMismatchError("flush: buffer/basis epoch mismatch");
  }
  const uint32_t r = basis.rank;
  for (size_t l = 0; l < basis.n_matrix_layers(); ++l) {
    auto& w = params.layers.at(basis.matrix_layers[l]);
    const auto& u = basis.u[l];
    const auto& v = basis.v[l];
    const auto& a = buffer.a[l];
    const size_t rows = w.shape.rows;
    const size_t cols = w.shape.cols;
    // (U A) first, then times V^T.
    std::vector<T> ua(rows * r, T(0));
    for (size_t i = 0; i < rows; ++i) {
      for (size_t k = 0; k < r; ++k) {
        T acc = T(0);
        for (size_t q = 0; q < r; ++q) acc += u.at(i, q) * a.at(q, k);
        ua[i * r + k] = acc;
      }
    }
    for (size_t i = 0; i < rows; ++i) {
      for (size_t j = 0; j < cols; ++j) {
        T acc = T(0);
        for (size_t k = 0; k < r; ++k) acc += ua[i * r + k] * v.at(j, k);
        w.at(i, j) += acc;
      }
    }
    std::fill(buffer.a[l].data.begin(), buffer.a[l].data.end(), T(0));
    if (madds) *madds += rows * r * r + rows * cols * r;
  }
  buffer.dirty = false;
}

/// Apply one update densely, layer by layer: w -= v * U[:,i] V[:,j]^T.
/// This is the per-message path SubCGE replaces; it stays for cost
/// comparison and for stale-epoch message application.
template <typename T>
void apply_coord_update_dense(ModelParams<T>& params,
                              const SubspaceBasis<T>& basis,
                              const CoordUpdate& update,
                              uint64_t* madds = nullptr) {
  if (update.coords.size() != basis.n_matrix_layers()) {
    throw CorruptedMessageError("dense apply: coordinate count mismatch");
  }
  for (size_t l = 0; l < basis.n_matrix_layers(); ++l) {
    auto& w = params.layers.at(basis.matrix_layers[l]);
    const auto& u = basis.u[l];
    const auto& v = basis.v[l];
    const auto [i, j] = update.coords[l];
    if (i >= basis.rank || j >= basis.rank) {
      throw CorruptedMessageError("dense apply: coordinate out of range");
    }
    const size_t rows = w.shape.rows;
    const size_t cols = w.shape.cols;
    for (size_t a = 0; a < rows; ++a) {
      const T lhs = static_cast<T>(-update.coefficient) * u.at(a, i);
      for (size_t b = 0; b < cols; ++b) {
        w.at(a, b) += lhs * v.at(b, j);
      }
    }
    if (madds) *madds += rows * cols + rows;
  }
}

/// Materialize the logical weights base + U A V^T into `scratch` and
/// return a reference to it; returns `base` directly when nothing is
/// buffered. 1D layers are copied as-is.
template <typename T>
const ModelParams<T>& effective_params(const ModelParams<T>& base,
                                       const CoordBuffer<T>* buffer,
                                       const SubspaceBasis<T>* basis,
                                       ModelParams<T>& scratch,
                                       uint64_t* madds = nullptr) {
  if (buffer == nullptr || basis == nullptr || !buffer->dirty ||
      basis->n_matrix_layers() == 0) {
    return base;
  }
  scratch = base;
  CoordBuffer<T> tmp = *buffer;  // flush folds and zeroes; work on a copy
  flush(tmp, scratch, *basis, madds);
  return scratch;
}

/// Measured multiply-add counts for applying `n_updates` messages via the
/// buffered path (coordinate writes + one flush) and via the dense
/// per-message path, on the same random update batch.
struct ApplyCostReport {
  uint64_t subcge_coord_madds = 0;
  uint64_t subcge_flush_madds = 0;
  uint64_t naive_madds = 0;
  uint64_t subcge_total() const {
    return subcge_coord_madds + subcge_flush_madds;
  }
};

template <typename T>
ApplyCostReport count_apply_ops(size_t n_updates,
                                std::span<const LayerShape> shapes,
                                uint32_t rank, Seed seed) {
  auto basis = refresh_basis<T>(seed, 0, shapes, rank, 1);
  auto buffer = CoordBuffer<T>::make(basis);
  auto params = ModelParams<T>::zeros(shapes);
  auto params_naive = ModelParams<T>::zeros(shapes);

  RandomStream stream = stream_from_seed(derive_seed(seed, 77));
  std::vector<CoordUpdate> updates(n_updates);
  for (auto& up : updates) {
    up.coefficient = stream.next_gaussian();
    up.coords.resize(basis.n_matrix_layers());
    for (auto& c : up.coords) {
      c.i = stream.uniform_index(rank);
      c.j = stream.uniform_index(rank);
    }
  }

  ApplyCostReport report;
  accumulate<T>(buffer, updates, &report.subcge_coord_madds);
  flush<T>(buffer, params, basis, &report.subcge_flush_madds);
  for (const auto& up : updates) {
    apply_coord_update_dense<T>(params_naive, basis, up, &report.naive_madds);
  }
  return report;
}

}  // namespace seedflood
