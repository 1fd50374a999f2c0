#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "seedflood/rng.hpp"

namespace seedflood {

enum class LayerKind { Matrix2D, Vector1D };

/// Shape of one parameter layer. 1D layers are stored as rows=len, cols=1
/// but keep their kind so subspace logic can tell them apart from thin
/// matrices.
struct LayerShape {
  LayerKind kind = LayerKind::Vector1D;
  size_t rows = 0;
  size_t cols = 1;

  static LayerShape matrix(size_t n, size_t m) {
    if (n < 1 || m < 1) {
      throw std::invalid_argument("LayerShape: matrix dims must be >= 1");
    }
    return LayerShape{LayerKind::Matrix2D, n, m};
  }
  static LayerShape vector(size_t len) {
    if (len < 1) {
      throw std::invalid_argument("LayerShape: vector length must be >= 1");
    }
    return LayerShape{LayerKind::Vector1D, len, 1};
  }

  size_t size() const { return rows * cols; }
  bool is_matrix() const { return kind == LayerKind::Matrix2D; }

  friend bool operator==(const LayerShape& a, const LayerShape& b) {
    return a.kind == b.kind && a.rows == b.rows && a.cols == b.cols;
  }
};

/// Dense row-major tensor over float or double.
template <typename T>
struct Tensor {
  LayerShape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(LayerShape s) : shape(s), data(s.size(), T(0)) {}

  T& at(size_t i, size_t j) { return data[i * shape.cols + j]; }
  const T& at(size_t i, size_t j) const { return data[i * shape.cols + j]; }
  size_t size() const { return data.size(); }
};

/// Ordered list of layer tensors; layer count, shapes, and ordering are
/// frozen for the life of a run and identical across clients.
template <typename T>
struct ModelParams {
  std::vector<Tensor<T>> layers;

  static ModelParams zeros(std::span<const LayerShape> shapes) {
    ModelParams p;
    p.layers.reserve(shapes.size());
    for (const auto& s : shapes) p.layers.emplace_back(s);
    return p;
  }

  size_t total_dim() const {
    size_t d = 0;
    for (const auto& l : layers) d += l.size();
    return d;
  }

  std::vector<LayerShape> shapes() const {
    std::vector<LayerShape> out;
    out.reserve(layers.size());
    for (const auto& l : layers) out.push_back(l.shape);
    return out;
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (size_t i = 0; i < a.layers.size(); ++i) {
      if (!(a.layers[i].shape == b.layers[i].shape)) return false;
      if (a.layers[i].data != b.layers[i].data) return false;
    }
    return true;
  }
};

/// Tensor of independent standard-Gaussian entries, filled in row-major
/// order; the stream position advances by exactly the element count.
template <typename T>
Tensor<T> gaussian_tensor(RandomStream& stream,
                          std::span<const size_t> dims) {
  if (dims.empty()) {
    throw std::invalid_argument("gaussian_tensor: empty shape");
  }
  size_t count = 1;
  for (size_t d : dims) {
    if (d == 0) {
      throw std::invalid_argument("gaussian_tensor: zero dimension");
    }
    if (count > std::numeric_limits<size_t>::max() / d) {
      throw std::invalid_argument("gaussian_tensor: shape overflows size_t");
    }
    count *= d;
  }
  LayerShape shape = dims.size() == 1
                         ? LayerShape::vector(dims[0])
                         : LayerShape::matrix(dims[0], dims[1]);
  if (dims.size() > 2) {
    throw std::invalid_argument("gaussian_tensor: rank > 2 unsupported");
  }
  Tensor<T> out(shape);
  for (size_t i = 0; i < count; ++i) {
    out.data[i] = static_cast<T>(stream.next_gaussian());
  }
  return out;
}

}  // namespace seedflood
