#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seedflood/protocol.hpp"
#include "seedflood/rng.hpp"
#include "seedflood/subcge.hpp"
#include "seedflood/task.hpp"
#include "seedflood/tensor.hpp"
#include "seedflood/topology.hpp"
#include "seedflood/zo.hpp"

namespace seedflood {

enum class Method { SeedFlood, Dsgd, Dzsgd, ChocoSgd, GossipSrDiagnostic };

std::string method_name(Method m);
Method method_from_name(const std::string& name);

struct TopologySpec {
  std::string kind = "ring";  // ring | meshgrid | path | star | random |
                              // custom | file
  size_t rows = 0, cols = 0;  // meshgrid
  size_t extra_edges = 0;     // random
  uint64_t graph_seed = 0;    // random
  std::string path;           // file
  EdgeList edges;             // custom
};

Topology build_topology_from_spec(const TopologySpec& spec, size_t n);

struct RunConfig {
  Method method = Method::SeedFlood;
  size_t n = 16;
  TopologySpec topology;
  uint64_t iterations = 1000;  // T
  TaskSpec task;
  double lr = 1e-3;            // constant eta_t
  double epsilon = 1e-3;
  uint32_t rank = 32;
  uint64_t tau = 1000;
  int64_t hops = -1;           // flooding hops per iteration; -1 = diameter
  size_t local_steps = 5;      // baseline iterations per communication round
  size_t batch_size = 8;
  uint64_t eval_every = 0;     // 0 = max(1, T/10)
  Seed seed{1};
  bool sender_exclusion = false;
  double keep_fraction = 0.01;  // choco top-k keep
  double gamma = 1.0;           // choco consensus step size

  // Introspection knobs used by tests; not part of the config file schema.
  bool record_trajectory = false;
  bool record_deliveries = false;
};

struct MetricsRecord {
  uint64_t iteration = 0;
  double global_loss = 0.0;      // train loss of the averaged model
  double loss_spread = 0.0;      // max-min per-client heldout loss
  double consensus_error = 0.0;  // max_i ||theta_i - theta_bar||_inf
  double heldout_loss = 0.0;
  double heldout_accuracy = 0.0;
  uint64_t bytes_total = 0;      // cumulative ledger bytes
  uint64_t messages_total = 0;
  uint64_t ge_madds = 0;         // cumulative, gradient estimation phase
  uint64_t ma_madds = 0;         // cumulative, message application phase
};

struct RunResult {
  std::vector<MetricsRecord> metrics;
  TrafficLedger ledger;
  OpCounters counters;
  size_t diameter = 0;
  size_t hops_used = 0;
  double final_loss = 0.0;
  double final_heldout_loss = 0.0;
  double final_heldout_accuracy = 0.0;
  double best_heldout_loss = 0.0;
  uint64_t best_heldout_iteration = 0;
  ModelParams<double> final_avg_params;  // buffers folded in

  // Filled only when the matching record_* knob is set.
  std::vector<std::vector<double>> trajectory;  // per-iteration flat theta_bar
  std::vector<DeliveryRecord> deliveries;
  std::vector<uint64_t> sr_reapplications;  // diagnostic mode, per iteration
};

/// Execute one configured run end to end.
RunResult run(const RunConfig& config);

struct GmpResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Global Model Performance: heldout loss/accuracy of the client average.
/// The mean is computed centered on the first client so that identical
/// clients yield their exact common value.
GmpResult evaluate_gmp(const Task<double>& task,
                       std::span<const ModelParams<double>> client_params);

/// Centered elementwise average of client parameter sets.
ModelParams<double> average_params(
    std::span<const ModelParams<double>> client_params);

}  // namespace seedflood
