#include "seedflood/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_map>

#include "seedflood/errors.hpp"

namespace seedflood {

std::string method_name(Method m) {
  switch (m) {
    case Method::SeedFlood: return "seedflood";
    case Method::Dsgd: return "dsgd";
    case Method::Dzsgd: return "dzsgd";
    case Method::ChocoSgd: return "chocosgd";
    case Method::GossipSrDiagnostic: return "gossip-sr-diagnostic";
  }
  return "unknown";
}

Method method_from_name(const std::string& name) {
  if (name == "seedflood") return Method::SeedFlood;
  if (name == "dsgd") return Method::Dsgd;
  if (name == "dzsgd") return Method::Dzsgd;
  if (name == "chocosgd") return Method::ChocoSgd;
  if (name == "gossip-sr-diagnostic") return Method::GossipSrDiagnostic;
  throw ConfigError("unknown method: " + name);
}

Topology build_topology_from_spec(const TopologySpec& spec, size_t n) {
  if (n == 1) {
    Topology topo;
    topo.n = 1;
    topo.adjacency.resize(1);
    topo.diameter = 0;
    topo.kind = "singleton";
    return topo;
  }
  if (spec.kind == "ring") return build_ring(n);
  if (spec.kind == "meshgrid") {
    size_t rows = spec.rows, cols = spec.cols;
    if (rows == 0 || cols == 0) {
      throw ConfigError("topology.meshgrid needs rows and cols");
    }
    if (rows * cols != n) {
      throw ConfigError("topology.meshgrid rows*cols must equal n");
    }
    return build_meshgrid(rows, cols);
  }
  if (spec.kind == "path") return build_custom(n, path_edges(n));
  if (spec.kind == "star") return build_custom(n, star_edges(n));
  if (spec.kind == "random") {
    return build_custom(
        n, random_connected_edges(n, spec.extra_edges, Seed{spec.graph_seed}));
  }
  if (spec.kind == "custom") return build_custom(n, spec.edges);
  if (spec.kind == "file") return load_topology_file(spec.path);
  throw ConfigError("unknown topology kind: " + spec.kind);
}

namespace {

struct Client {
  ModelParams<double> params;
  CoordBuffer<double> buffer;
  RandomStream stream;
};

uint64_t forward_madds_per_sample(const Task<double>& task) {
  switch (task.kind) {
    case TaskKind::Logistic:
    case TaskKind::LeastSquares:
      return task.train.n_features;
    case TaskKind::TinyMlp: {
      const size_t f = task.train.n_features;
      const size_t h = task.spec.hidden;
      const size_t c = task.spec.classes;
      return f * h + h + h * c + c;
    }
  }
  return 0;
}

ModelParams<double> make_initial_params(const Task<double>& task, Seed seed) {
  auto params = ModelParams<double>::zeros(task.layer_shapes);
  if (task.kind == TaskKind::TinyMlp) {
    RandomStream stream = stream_from_seed(seed);
    for (auto& layer : params.layers) {
      if (layer.shape.is_matrix()) {
        const double scale =
            1.0 / std::sqrt(static_cast<double>(layer.shape.rows));
        for (auto& w : layer.data) w = scale * stream.next_gaussian();
      }
    }
  }
  return params;
}

/// Segments of the logical per-client state compared for consensus:
/// base parameter layers followed by buffer layers.
std::vector<const std::vector<double>*> state_segments(const Client& c) {
  std::vector<const std::vector<double>*> segs;
  for (const auto& layer : c.params.layers) segs.push_back(&layer.data);
  for (const auto& a : c.buffer.a) segs.push_back(&a.data);
  return segs;
}

/// max_i ||x_i - x_bar||_inf with the mean computed centered on client 0,
/// so bit-identical clients measure exactly zero.
double consensus_error_centered(const std::vector<Client>& clients) {
  const size_t n = clients.size();
  if (n <= 1) return 0.0;
  auto base = state_segments(clients[0]);
  std::vector<std::vector<const std::vector<double>*>> all(n);
  for (size_t i = 0; i < n; ++i) all[i] = state_segments(clients[i]);

  double worst = 0.0;
  for (size_t s = 0; s < base.size(); ++s) {
    const size_t len = base[s]->size();
    for (size_t e = 0; e < len; ++e) {
      const double x0 = (*base[s])[e];
      double mean_delta = 0.0;
      for (size_t i = 1; i < n; ++i) {
        mean_delta += (*all[i][s])[e] - x0;
      }
      mean_delta /= static_cast<double>(n);
      for (size_t i = 0; i < n; ++i) {
        const double delta = (*all[i][s])[e] - x0;
        worst = std::max(worst, std::abs(delta - mean_delta));
      }
    }
  }
  return worst;
}

ModelParams<double> average_params_impl(
    std::span<const ModelParams<double>> params) {
  if (params.empty()) {
    throw std::invalid_argument("average_params: no clients");
  }
  const size_t n = params.size();
  ModelParams<double> avg = params[0];
  if (n == 1) return avg;
  for (size_t l = 0; l < avg.layers.size(); ++l) {
    auto& dst = avg.layers[l].data;
    const auto& first = params[0].layers[l].data;
    for (size_t e = 0; e < dst.size(); ++e) {
      double mean_delta = 0.0;
      for (size_t i = 1; i < n; ++i) {
        mean_delta += params[i].layers[l].data[e] - first[e];
      }
      dst[e] = first[e] + mean_delta / static_cast<double>(n);
    }
  }
  return avg;
}

struct EvalContext {
  const Task<double>* task;
  Minibatch<double> train_batch;
  Minibatch<double> heldout_batch;
};

void record_metrics(RunResult& result, const EvalContext& eval, uint64_t t,
                    const std::vector<ModelParams<double>>& logical,
                    double consensus) {
  const auto& task = *eval.task;
  auto avg = average_params_impl(logical);
  MetricsRecord rec;
  rec.iteration = t;
  rec.global_loss = loss(task, avg, eval.train_batch);
  rec.consensus_error = consensus;
  rec.heldout_loss = loss(task, avg, eval.heldout_batch);
  rec.heldout_accuracy = accuracy(task, avg, eval.heldout_batch);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& p : logical) {
    const double l = loss(task, p, eval.heldout_batch);
    lo = std::min(lo, l);
    hi = std::max(hi, l);
  }
  rec.loss_spread = hi - lo;
  rec.bytes_total = result.ledger.total_bytes();
  rec.messages_total = result.ledger.total_messages();
  rec.ge_madds = result.counters.ge_madds;
  rec.ma_madds = result.counters.ma_total();
  result.metrics.push_back(rec);
  if (rec.heldout_loss < result.best_heldout_loss) {
    result.best_heldout_loss = rec.heldout_loss;
    result.best_heldout_iteration = t;
  }
}

void finalize(RunResult& result, const EvalContext& eval,
              std::vector<ModelParams<double>> logical) {
  result.final_avg_params = average_params_impl(logical);
  result.final_loss = loss(*eval.task, result.final_avg_params,
                           eval.train_batch);
  result.final_heldout_loss =
      loss(*eval.task, result.final_avg_params, eval.heldout_batch);
  result.final_heldout_accuracy =
      accuracy(*eval.task, result.final_avg_params, eval.heldout_batch);
}

std::vector<double> flatten(const ModelParams<double>& params) {
  std::vector<double> flat;
  flat.reserve(params.total_dim());
  for (const auto& layer : params.layers) {
    flat.insert(flat.end(), layer.data.begin(), layer.data.end());
  }
  return flat;
}

struct SimError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

RunResult run_seedflood(const RunConfig& cfg, const Task<double>& task,
                        const Topology& topo) {
  const size_t n = cfg.n;
  const uint64_t total_iters = cfg.iterations;
  const auto shapes = task.layer_shapes;
  const size_t hops =
      cfg.hops < 0 ? topo.diameter : static_cast<size_t>(cfg.hops);

  RunResult result;
  result.diameter = topo.diameter;
  result.hops_used = hops;
  result.best_heldout_loss = std::numeric_limits<double>::infinity();

  const Seed init_seed = derive_seed(cfg.seed, 2);
  const uint64_t s_glob = derive_seed(cfg.seed, 3).value;
  const auto theta0 = make_initial_params(task, init_seed);

  std::vector<Client> clients;
  clients.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    clients.push_back(Client{theta0, CoordBuffer<double>{},
                             stream_from_seed(derive_seed(cfg.seed, 0x100 + i))});
  }

  SubspaceBasis<double> basis;
  std::optional<SubspaceBasis<double>> archived;
  bool have_basis = false;

  FloodEngine engine(topo, &result.ledger, cfg.sender_exclusion,
                     cfg.record_deliveries);
  OpCounters& ctr = result.counters;
  ModelParams<double> scratch;

  const uint64_t fwd = forward_madds_per_sample(task);
  const uint64_t eval_every =
      cfg.eval_every ? cfg.eval_every : std::max<uint64_t>(1, total_iters / 10);
  EvalContext eval{&task, task.full_train_batch(), task.heldout_batch()};

  auto logical_params = [&](const Client& c) {
    ModelParams<double> out = c.params;
    if (have_basis && c.buffer.dirty) {
      CoordBuffer<double> tmp = c.buffer;
      flush(tmp, out, basis);
    }
    return out;
  };

  auto apply_message = [&](Client& c, const UpdateMessage& m) {
    if (have_basis && m.epoch == static_cast<uint32_t>(basis.epoch)) {
      RandomStream stream = stream_from_seed(Seed{m.seed});
      size_t ordinal = 0;
      for (auto& layer : c.params.layers) {
        if (layer.shape.is_matrix()) {
          const uint32_t ci = stream.uniform_index(basis.rank);
          const uint32_t cj = stream.uniform_index(basis.rank);
          c.buffer.a[ordinal].at(ci, cj) -= m.coefficient;
          ++ctr.ma_coord;
          ++ordinal;
        } else {
          for (auto& w : layer.data) {
            w -= m.coefficient * stream.next_gaussian();
          }
          ctr.ma_dense += layer.size();
        }
      }
      if (ordinal > 0) c.buffer.dirty = true;
    } else if (archived &&
               m.epoch == static_cast<uint32_t>(archived->epoch)) {
      // Stale message from before the last refresh: densify against the
      // archived basis; its coordinates have no meaning in the new buffer.
      Perturbation pert{PerturbKind::SubCge, Seed{m.seed}, cfg.epsilon,
                        archived->epoch, {}};
      apply_perturbation_dense(c.params, pert, &*archived, -m.coefficient,
                               &ctr.ma_dense);
    } else {
      throw EpochMismatchError("message epoch " + std::to_string(m.epoch) +
                               " is neither current nor archived");
    }
  };

  for (uint64_t t = 0; t < total_iters; ++t) {
    try {
      result.ledger.begin_iteration(t);

      // (A) Subspace refresh: fold buffers, archive the old basis, redraw.
      if (t % cfg.tau == 0) {
        if (have_basis) {
          for (auto& c : clients) {
            flush(c.buffer, c.params, basis, &ctr.ma_flush);
          }
          archived = std::move(basis);
        }
        basis =
            refresh_basis<double>(Seed{s_glob}, t, shapes, cfg.rank, cfg.tau);
        for (auto& c : clients) c.buffer = CoordBuffer<double>::make(basis);
        have_basis = true;
      }

      // (B) Local gradient estimation; own updates join the same
      // canonically ordered barrier batch as received ones.
      for (size_t i = 0; i < n; ++i) {
        auto& c = clients[i];
        auto batch = task.sample_minibatch(i, cfg.batch_size, c.stream);
        const Seed msg_seed{c.stream.next_u64()};
        const auto pert = sample_canonical_perturbation<double>(
            msg_seed, basis, shapes, cfg.epsilon);
        auto loss_fn = [&]() {
          const auto& eff = effective_params(c.params, &c.buffer, &basis,
                                             scratch, &ctr.ge_madds);
          ctr.ge_madds += fwd * batch.size();
          return loss(task, eff, batch);
        };
        const double alpha = two_point_alpha(c.params, &c.buffer, pert,
                                             loss_fn);
        const double v = cfg.lr * alpha / static_cast<double>(n);
        engine.inject(i,
                      UpdateMessage{MessageId{static_cast<uint32_t>(i),
                                              static_cast<uint32_t>(t)},
                                    msg_seed.value, v,
                                    static_cast<uint32_t>(basis.epoch)},
                      t);
      }

      // (C) Flooding hops, then the round-barrier application.
      engine.run_hops(hops, t,
                      [&](size_t i, std::span<const UpdateMessage> batch) {
                        for (const auto& m : batch) {
                          apply_message(clients[i], m);
                        }
                      });

      if ((t + 1) % eval_every == 0 || t + 1 == total_iters) {
        std::vector<ModelParams<double>> logical;
        logical.reserve(n);
        for (const auto& c : clients) logical.push_back(logical_params(c));
        record_metrics(result, eval, t, logical,
                       consensus_error_centered(clients));
      }
      if (cfg.record_trajectory) {
        result.trajectory.push_back(flatten(logical_params(clients[0])));
      }
    } catch (const std::exception& e) {
      throw SimError("iteration " + std::to_string(t) + ": " + e.what());
    }
  }

  result.ledger.finish();
  if (cfg.record_deliveries) result.deliveries = engine.deliveries();
  std::vector<ModelParams<double>> logical;
  logical.reserve(n);
  for (const auto& c : clients) logical.push_back(logical_params(c));
  finalize(result, eval, std::move(logical));
  return result;
}

RunResult run_gossip_dense(const RunConfig& cfg, const Task<double>& task,
                           const Topology& topo, bool zeroth_order) {
  const size_t n = cfg.n;
  const uint64_t total_iters = cfg.iterations;

  RunResult result;
  result.diameter = topo.diameter;
  result.best_heldout_loss = std::numeric_limits<double>::infinity();

  const auto mixing = metropolis_weights(topo);
  if (n > 1) validate_mixing(mixing);
  const Seed init_seed = derive_seed(cfg.seed, 2);
  const auto theta0 = make_initial_params(task, init_seed);

  std::vector<Client> clients;
  clients.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    clients.push_back(Client{theta0, CoordBuffer<double>{},
                             stream_from_seed(derive_seed(cfg.seed, 0x100 + i))});
  }

  OpCounters& ctr = result.counters;
  const uint64_t fwd = forward_madds_per_sample(task);
  const uint64_t eval_every =
      cfg.eval_every ? cfg.eval_every : std::max<uint64_t>(1, total_iters / 10);
  EvalContext eval{&task, task.full_train_batch(), task.heldout_batch()};
  const size_t dim = theta0.total_dim();

  for (uint64_t t = 0; t < total_iters; ++t) {
    try {
      result.ledger.begin_iteration(t);
      for (size_t i = 0; i < n; ++i) {
        auto& c = clients[i];
        auto batch = task.sample_minibatch(i, cfg.batch_size, c.stream);
        if (zeroth_order) {
          const Seed msg_seed{c.stream.next_u64()};
          const auto pert = sample_full_gaussian(msg_seed, cfg.epsilon);
          auto loss_fn = [&]() {
            ctr.ge_madds += fwd * batch.size();
            return loss(task, c.params, batch);
          };
          const double alpha =
              two_point_alpha(c.params, nullptr, pert, loss_fn);
          apply_perturbation_dense(c.params, pert, nullptr, -cfg.lr * alpha,
                                   &ctr.ge_madds);
        } else {
          const auto grad = true_gradient(task, c.params, batch);
          for (size_t l = 0; l < c.params.layers.size(); ++l) {
            auto& dst = c.params.layers[l].data;
            const auto& g = grad.layers[l].data;
            for (size_t e = 0; e < dst.size(); ++e) {
              dst[e] -= cfg.lr * g[e];
            }
          }
          ctr.ge_madds += 2 * fwd * batch.size() + dim;
        }
      }
      if (n > 1 && (t + 1) % cfg.local_steps == 0) {
        std::vector<ModelParams<double>*> ptrs;
        ptrs.reserve(n);
        for (auto& c : clients) ptrs.push_back(&c.params);
        gossip_average_dense(ptrs, mixing, &topo, &result.ledger);
        ctr.ma_dense += n * dim;  // weighted-average recomputation
      }
      if ((t + 1) % eval_every == 0 || t + 1 == total_iters) {
        std::vector<ModelParams<double>> logical;
        logical.reserve(n);
        for (const auto& c : clients) logical.push_back(c.params);
        record_metrics(result, eval, t, logical,
                       consensus_error_centered(clients));
      }
      if (cfg.record_trajectory) {
        result.trajectory.push_back(flatten(clients[0].params));
      }
    } catch (const std::exception& e) {
      throw SimError("iteration " + std::to_string(t) + ": " + e.what());
    }
  }

  result.ledger.finish();
  std::vector<ModelParams<double>> logical;
  logical.reserve(n);
  for (const auto& c : clients) logical.push_back(c.params);
  finalize(result, eval, std::move(logical));
  return result;
}

RunResult run_choco(const RunConfig& cfg, const Task<double>& task,
                    const Topology& topo) {
  const size_t n = cfg.n;
  const uint64_t total_iters = cfg.iterations;

  RunResult result;
  result.diameter = topo.diameter;
  result.best_heldout_loss = std::numeric_limits<double>::infinity();

  const auto mixing = metropolis_weights(topo);
  if (n > 1) validate_mixing(mixing);
  const Seed init_seed = derive_seed(cfg.seed, 2);
  const auto theta0 = make_initial_params(task, init_seed);

  std::vector<Client> clients;
  clients.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    clients.push_back(Client{theta0, CoordBuffer<double>{},
                             stream_from_seed(derive_seed(cfg.seed, 0x100 + i))});
  }
  // Public surrogates; every client's view of them stays identical because
  // all compressed differences are broadcast.
  std::vector<ModelParams<double>> surrogate(n, theta0);

  OpCounters& ctr = result.counters;
  const uint64_t fwd = forward_madds_per_sample(task);
  const uint64_t eval_every =
      cfg.eval_every ? cfg.eval_every : std::max<uint64_t>(1, total_iters / 10);
  EvalContext eval{&task, task.full_train_batch(), task.heldout_batch()};
  const size_t dim = theta0.total_dim();

  for (uint64_t t = 0; t < total_iters; ++t) {
    try {
      result.ledger.begin_iteration(t);
      for (size_t i = 0; i < n; ++i) {
        auto& c = clients[i];
        auto batch = task.sample_minibatch(i, cfg.batch_size, c.stream);
        const auto grad = true_gradient(task, c.params, batch);
        for (size_t l = 0; l < c.params.layers.size(); ++l) {
          auto& dst = c.params.layers[l].data;
          const auto& g = grad.layers[l].data;
          for (size_t e = 0; e < dst.size(); ++e) dst[e] -= cfg.lr * g[e];
        }
        ctr.ge_madds += 2 * fwd * batch.size() + dim;
      }
      if (n > 1 && (t + 1) % cfg.local_steps == 0) {
        // q_i = topk(x_i - xhat_i); broadcast, surrogates advance by q.
        std::vector<SparsePayload> payloads(n);
        for (size_t i = 0; i < n; ++i) {
          ModelParams<double> delta = clients[i].params;
          for (size_t l = 0; l < delta.layers.size(); ++l) {
            const auto& s = surrogate[i].layers[l].data;
            auto& d = delta.layers[l].data;
            for (size_t e = 0; e < d.size(); ++e) d[e] -= s[e];
          }
          payloads[i] = compress_topk(delta, cfg.keep_fraction);
          for (size_t j : topo.adjacency[i]) {
            result.ledger.account(
                static_cast<uint32_t>(i), static_cast<uint32_t>(j), 1,
                payloads[i].indices.size() * topk_entry_wire_bytes);
          }
        }
        ModelParams<double> expanded = theta0;  // shape template
        for (size_t i = 0; i < n; ++i) {
          decompress_into(payloads[i], expanded);
          for (size_t l = 0; l < expanded.layers.size(); ++l) {
            auto& s = surrogate[i].layers[l].data;
            const auto& q = expanded.layers[l].data;
            for (size_t e = 0; e < q.size(); ++e) s[e] += q[e];
          }
        }
        // x_i += gamma * sum_j w_ij (xhat_j - xhat_i)
        for (size_t i = 0; i < n; ++i) {
          for (size_t l = 0; l < clients[i].params.layers.size(); ++l) {
            auto& x = clients[i].params.layers[l].data;
            const auto& si = surrogate[i].layers[l].data;
            for (size_t e = 0; e < x.size(); ++e) {
              double acc = 0.0;
              for (size_t j : topo.adjacency[i]) {
                acc += mixing.at(i, j) *
                       (surrogate[j].layers[l].data[e] - si[e]);
              }
              x[e] += cfg.gamma * acc;
            }
          }
          ctr.ma_dense += dim * topo.adjacency[i].size();
        }
      }
      if ((t + 1) % eval_every == 0 || t + 1 == total_iters) {
        std::vector<ModelParams<double>> logical;
        logical.reserve(n);
        for (const auto& c : clients) logical.push_back(c.params);
        record_metrics(result, eval, t, logical,
                       consensus_error_centered(clients));
      }
      if (cfg.record_trajectory) {
        result.trajectory.push_back(flatten(clients[0].params));
      }
    } catch (const std::exception& e) {
      throw SimError("iteration " + std::to_string(t) + ": " + e.what());
    }
  }

  result.ledger.finish();
  std::vector<ModelParams<double>> logical;
  logical.reserve(n);
  for (const auto& c : clients) logical.push_back(c.params);
  finalize(result, eval, std::move(logical));
  return result;
}

RunResult run_gossip_sr(const RunConfig& cfg, const Task<double>& task,
                        const Topology& topo) {
  const size_t n = cfg.n;
  const uint64_t total_iters = cfg.iterations;

  RunResult result;
  result.diameter = topo.diameter;
  result.best_heldout_loss = std::numeric_limits<double>::infinity();

  const auto mixing = metropolis_weights(topo);
  if (n > 1) validate_mixing(mixing);
  const Seed init_seed = derive_seed(cfg.seed, 2);
  const auto theta0 = make_initial_params(task, init_seed);

  std::vector<Client> clients;
  clients.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    clients.push_back(Client{theta0, CoordBuffer<double>{},
                             stream_from_seed(derive_seed(cfg.seed, 0x100 + i))});
  }
  std::vector<GossipSRState> sr_states(n);
  std::unordered_map<uint64_t, UpdateMessage> registry;

  OpCounters& ctr = result.counters;
  const uint64_t fwd = forward_madds_per_sample(task);
  const uint64_t eval_every =
      cfg.eval_every ? cfg.eval_every : std::max<uint64_t>(1, total_iters / 10);
  EvalContext eval{&task, task.full_train_batch(), task.heldout_batch()};

  for (uint64_t t = 0; t < total_iters; ++t) {
    try {
      result.ledger.begin_iteration(t);
      for (size_t i = 0; i < n; ++i) {
        auto& c = clients[i];
        auto batch = task.sample_minibatch(i, cfg.batch_size, c.stream);
        const Seed msg_seed{c.stream.next_u64()};
        const auto pert = sample_full_gaussian(msg_seed, cfg.epsilon);
        auto loss_fn = [&]() {
          ctr.ge_madds += fwd * batch.size();
          return loss(task, c.params, batch);
        };
        const double alpha = two_point_alpha(c.params, nullptr, pert, loss_fn);
        const double v = cfg.lr * alpha;
        apply_perturbation_dense(c.params, pert, nullptr, -v, &ctr.ge_madds);
        const MessageId id{static_cast<uint32_t>(i), static_cast<uint32_t>(t)};
        registry.emplace(id.key(),
                         UpdateMessage{id, msg_seed.value, v, 0});
        sr_states[i].coeffs[id.key()] = 1.0;
      }
      uint64_t reapps = 0;
      if (n > 1 && (t + 1) % cfg.local_steps == 0) {
        reapps = gossip_sr_round(
            sr_states, mixing, topo, &result.ledger,
            [&](size_t client, uint64_t key, double delta) {
              const auto& m = registry.at(key);
              const auto pert = sample_full_gaussian(Seed{m.seed},
                                                     cfg.epsilon);
              apply_perturbation_dense(clients[client].params, pert, nullptr,
                                       -delta * m.coefficient,
                                       &ctr.ma_dense);
            });
      }
      result.sr_reapplications.push_back(reapps);
      if ((t + 1) % eval_every == 0 || t + 1 == total_iters) {
        std::vector<ModelParams<double>> logical;
        logical.reserve(n);
        for (const auto& c : clients) logical.push_back(c.params);
        record_metrics(result, eval, t, logical,
                       consensus_error_centered(clients));
      }
      if (cfg.record_trajectory) {
        result.trajectory.push_back(flatten(clients[0].params));
      }
    } catch (const std::exception& e) {
      throw SimError("iteration " + std::to_string(t) + ": " + e.what());
    }
  }

  result.ledger.finish();
  std::vector<ModelParams<double>> logical;
  logical.reserve(n);
  for (const auto& c : clients) logical.push_back(c.params);
  finalize(result, eval, std::move(logical));
  return result;
}

}  // namespace

RunResult run(const RunConfig& config) {
  if (config.n < 1) throw ConfigError("n must be >= 1");
  if (config.iterations < 1) throw ConfigError("T must be >= 1");
  const auto topo = build_topology_from_spec(config.topology, config.n);
  if (config.method == Method::SeedFlood && config.hops >= 0 &&
      static_cast<size_t>(config.hops) > topo.diameter) {
    throw ConfigError("hops k=" + std::to_string(config.hops) +
                      " exceeds topology diameter D=" +
                      std::to_string(topo.diameter));
  }
  const auto task =
      generate_task<double>(config.task, derive_seed(config.seed, 1),
                            config.n);
  switch (config.method) {
    case Method::SeedFlood:
      return run_seedflood(config, task, topo);
    case Method::Dsgd:
      return run_gossip_dense(config, task, topo, /*zeroth_order=*/false);
    case Method::Dzsgd:
      return run_gossip_dense(config, task, topo, /*zeroth_order=*/true);
    case Method::ChocoSgd:
      return run_choco(config, task, topo);
    case Method::GossipSrDiagnostic:
      return run_gossip_sr(config, task, topo);
  }
  throw ConfigError("unhandled method");
}

ModelParams<double> average_params(
    std::span<const ModelParams<double>> client_params) {
  return average_params_impl(client_params);
}

GmpResult evaluate_gmp(const Task<double>& task,
                       std::span<const ModelParams<double>> client_params) {
  const auto avg = average_params_impl(client_params);
  const auto heldout = task.heldout_batch();
  return GmpResult{loss(task, avg, heldout), accuracy(task, avg, heldout)};
}

}  // namespace seedflood
