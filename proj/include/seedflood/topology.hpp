#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "seedflood/rng.hpp"

namespace seedflood {

using EdgeList = std::vector<std::pair<size_t, size_t>>;

/// Undirected connected communication graph. `diameter` is the true graph
/// diameter, computed (and test-verified) by all-pairs BFS.
struct Topology {
  size_t n = 0;
  std::vector<std::vector<size_t>> adjacency;  // sorted neighbor lists
  size_t diameter = 0;
  std::string kind;

  EdgeList edges() const {
    EdgeList out;
    for (size_t u = 0; u < n; ++u) {
      for (size_t v : adjacency[u]) {
        if (u < v) out.emplace_back(u, v);
      }
    }
    return out;
  }
};

/// Symmetric doubly stochastic mixing weights, dense n x n.
struct MixingMatrix {
  size_t n = 0;
  std::vector<double> w;  // row-major

  double at(size_t i, size_t j) const { return w[i * n + j]; }
  double& at(size_t i, size_t j) { return w[i * n + j]; }
};

/// Hop distances from one source (BFS).
std::vector<size_t> bfs_distances(const Topology& topo, size_t source);

Topology build_ring(size_t n);
Topology build_meshgrid(size_t rows, size_t cols);

/// Arbitrary undirected graph from an edge list; throws
/// InvalidTopologyError if disconnected, self-looped, or out of range.
Topology build_custom(size_t n, const EdgeList& edges);

/// Edge-list file: one "u v" pair per line, 0-indexed; '#' comments allowed.
Topology load_topology_file(const std::string& path);

EdgeList path_edges(size_t n);
EdgeList star_edges(size_t n);  // vertex 0 is the hub

/// Random spanning tree plus `extra_edges` distinct chords; connected by
/// construction and deterministic in the seed.
EdgeList random_connected_edges(size_t n, size_t extra_edges, Seed seed);

/// Metropolis-Hastings weights: w_ij = 1/(1+max(deg_i,deg_j)) on edges,
/// diagonal takes the slack. Symmetric doubly stochastic on any graph.
MixingMatrix metropolis_weights(const Topology& topo);

/// Second-largest eigenvalue modulus of W (power iteration on the
/// consensus-deflated matrix). Strictly below 1 on connected graphs.
double mixing_slem(const MixingMatrix& w);

}  // namespace seedflood
