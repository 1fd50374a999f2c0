#include "seedflood/topology.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "seedflood/errors.hpp"

namespace seedflood {

std::vector<size_t> bfs_distances(const Topology& topo, size_t source) {
  constexpr size_t kUnreached = static_cast<size_t>(-1);
  std::vector<size_t> dist(topo.n, kUnreached);
  std::deque<size_t> queue{source};
  dist[source] = 0;
  while (!queue.empty()) {
    const size_t u = queue.front();
    queue.pop_front();
    for (size_t v : topo.adjacency[u]) {
      if (dist[v] == kUnreached) {
        dist[v] = dist[u] + 1;
        queue.push_back(v);
      }
    }
  }
  return dist;
}

namespace {

size_t compute_diameter(const Topology& topo) {
  size_t diam = 0;
  for (size_t s = 0; s < topo.n; ++s) {
    const auto dist = bfs_distances(topo, s);
    for (size_t d : dist) {
      if (d == static_cast<size_t>(-1)) {
        throw InvalidTopologyError("topology is not connected");
      }
      diam = std::max(diam, d);
    }
  }
  return diam;
}

Topology finish(Topology topo) {
  for (auto& nbrs : topo.adjacency) {
    std::sort(nbrs.begin(), nbrs.end());
    nbrs.erase(std::unique(nbrs.begin(), nbrs.end()), nbrs.end());
  }
  topo.diameter = compute_diameter(topo);
  return topo;
}

}  // namespace

Topology build_ring(size_t n) {
  if (n < 2) throw std::invalid_argument("ring: n must be >= 2");
  Topology topo;
  topo.n = n;
  topo.kind = "ring";
  topo.adjacency.resize(n);
  for (size_t i = 0; i < n; ++i) {
    topo.adjacency[i].push_back((i + 1) % n);
    topo.adjacency[i].push_back((i + n - 1) % n);
  }
  return finish(std::move(topo));
}

Topology build_meshgrid(size_t rows, size_t cols) {
  if (rows * cols < 2) {
    throw std::invalid_argument("meshgrid: need at least 2 vertices");
  }
  Topology topo;
  topo.n = rows * cols;
  topo.kind = "meshgrid";
  topo.adjacency.resize(topo.n);
  auto id = [cols](size_t r, size_t c) { return r * cols + c; };
  for (size_t r = 0; r < rows; ++r) {
    for (size_t c = 0; c < cols; ++c) {
      if (r + 1 < rows) {
        topo.adjacency[id(r, c)].push_back(id(r + 1, c));
        topo.adjacency[id(r + 1, c)].push_back(id(r, c));
      }
      if (c + 1 < cols) {
        topo.adjacency[id(r, c)].push_back(id(r, c + 1));
        topo.adjacency[id(r, c + 1)].push_back(id(r, c));
      }
    }
  }
  return finish(std::move(topo));
}

Topology build_custom(size_t n, const EdgeList& edges) {
  if (n < 2) throw std::invalid_argument("custom topology: n must be >= 2");
  Topology topo;
  topo.n = n;
  topo.kind = "custom";
  topo.adjacency.resize(n);
  for (const auto& [u, v] : edges) {
    if (u >= n || v >= n) {
      throw InvalidTopologyError("edge endpoint out of range");
    }
    if (u == v) throw InvalidTopologyError("self-loop not allowed");
    topo.adjacency[u].push_back(v);
    topo.adjacency[v].push_back(u);
  }
  return finish(std::move(topo));
}

Topology load_topology_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidTopologyError("cannot open topology file: " + path);
  EdgeList edges;
  size_t max_vertex = 0;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    size_t u, v;
    if (ls >> u >> v) {
      edges.emplace_back(u, v);
      max_vertex = std::max({max_vertex, u, v});
    }
  }
  if (edges.empty()) throw InvalidTopologyError("topology file has no edges");
  return build_custom(max_vertex + 1, edges);
}

EdgeList path_edges(size_t n) {
  EdgeList edges;
  for (size_t i = 0; i + 1 < n; ++i) edges.emplace_back(i, i + 1);
  return edges;
}

EdgeList star_edges(size_t n) {
  EdgeList edges;
  for (size_t i = 1; i < n; ++i) edges.emplace_back(0, i);
  return edges;
}

EdgeList random_connected_edges(size_t n, size_t extra_edges, Seed seed) {
  RandomStream stream = stream_from_seed(seed);
  std::set<std::pair<size_t, size_t>> picked;
  // Random attachment tree keeps it connected.
  for (size_t v = 1; v < n; ++v) {
    const size_t u = stream.uniform_index(static_cast<uint32_t>(v));
    picked.emplace(std::min(u, v), std::max(u, v));
  }
  const size_t max_edges = n * (n - 1) / 2;
  size_t want = std::min(picked.size() + extra_edges, max_edges);
  while (picked.size() < want) {
    const size_t u = stream.uniform_index(static_cast<uint32_t>(n));
    const size_t v = stream.uniform_index(static_cast<uint32_t>(n));
    if (u == v) continue;
    picked.emplace(std::min(u, v), std::max(u, v));
  }
  return EdgeList(picked.begin(), picked.end());
}

MixingMatrix metropolis_weights(const Topology& topo) {
  MixingMatrix mix;
  mix.n = topo.n;
  mix.w.assign(topo.n * topo.n, 0.0);
  for (size_t i = 0; i < topo.n; ++i) {
    double off_diag = 0.0;
    for (size_t j : topo.adjacency[i]) {
      const double wij =
          1.0 / (1.0 + static_cast<double>(std::max(
                           topo.adjacency[i].size(), topo.adjacency[j].size())));
      mix.at(i, j) = wij;
      off_diag += wij;
    }
    mix.at(i, i) = 1.0 - off_diag;
  }
  return mix;
}

double mixing_slem(const MixingMatrix& w) {
  const size_t n = w.n;
  // Power iteration on B = W - (1/n) 1 1^T, which removes the consensus
  // eigenpair of a doubly stochastic W.
  std::vector<double> x(n), y(n);
  RandomStream stream = stream_from_seed(Seed{0x5eedf100d});
  for (auto& v : x) v = stream.next_gaussian();
  double lambda = 0.0;
  for (int it = 0; it < 2000; ++it) {
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(n);
    for (auto& v : x) v -= mean;
    double norm = 0.0;
    for (double v : x) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    for (auto& v : x) v /= norm;
    for (size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (size_t j = 0; j < n; ++j) acc += w.at(i, j) * x[j];
      y[i] = acc;
    }
    lambda = 0.0;
    for (size_t i = 0; i < n; ++i) lambda += x[i] * y[i];
    x.swap(y);
  }
  return std::abs(lambda);
}

}  // namespace seedflood
