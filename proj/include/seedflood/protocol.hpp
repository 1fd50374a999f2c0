#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "seedflood/rng.hpp"
#include "seedflood/tensor.hpp"
#include "seedflood/topology.hpp"

namespace seedflood {

/// Network-wide unique message identity. Dedup keys on (origin, iteration),
/// never on the seed, so a seed collision can not cause a silent drop.
/// Canonical ordering is (iteration, origin).
struct MessageId {
  uint32_t origin = 0;
  uint32_t iteration = 0;

  uint64_t key() const {
    return (static_cast<uint64_t>(iteration) << 32) | origin;
  }
  static MessageId from_key(uint64_t k) {
    return MessageId{static_cast<uint32_t>(k & 0xFFFFFFFFu),
                     static_cast<uint32_t>(k >> 32)};
  }
  friend bool operator==(MessageId a, MessageId b) {
    return a.origin == b.origin && a.iteration == b.iteration;
  }
  friend bool operator<(MessageId a, MessageId b) {
    return a.key() < b.key();
  }
};

/// The seed-scalar pair on the wire. Size is a constant independent of the
/// model dimension.
struct UpdateMessage {
  MessageId id;
  uint64_t seed = 0;
  double coefficient = 0.0;  // eta_t * alpha / n, pre-folded at the origin
  uint32_t epoch = 0;

  friend bool operator==(const UpdateMessage& a, const UpdateMessage& b) {
    return a.id == b.id && a.seed == b.seed &&
           a.coefficient == b.coefficient && a.epoch == b.epoch;
  }
};

/// Wire format, little-endian:
///   origin u32 | iteration u32 | seed u64 | coefficient f64 | epoch u32
inline constexpr size_t kMessageWireBytes = 28;

std::array<uint8_t, kMessageWireBytes> encode_message(const UpdateMessage& m);
UpdateMessage decode_message(std::span<const uint8_t> bytes);

/// Dense float32 payload accounting used by the gossip baselines.
inline constexpr size_t dense_wire_bytes(size_t dim) { return dim * 4; }
/// Top-K payload: u32 index + f32 value per kept entry.
inline constexpr size_t topk_entry_wire_bytes = 8;

/// Exact per-directed-edge traffic counters, with per-iteration rows for
/// CSV export. Bytes are always messages-times-wire-size; there is no
/// hidden traffic.
class TrafficLedger {
 public:
  struct Counts {
    uint64_t messages = 0;
    uint64_t bytes = 0;
    friend bool operator==(const Counts&, const Counts&) = default;
  };
  struct Row {
    uint64_t iteration = 0;
    uint32_t from = 0;
    uint32_t to = 0;
    uint64_t messages = 0;
    uint64_t bytes = 0;
    friend bool operator==(const Row&, const Row&) = default;
  };

  void begin_iteration(uint64_t t);
  void account(uint32_t from, uint32_t to, uint64_t messages, uint64_t bytes);
  void finish();

  const std::map<std::pair<uint32_t, uint32_t>, Counts>& totals() const {
    return totals_;
  }
  const std::vector<Row>& rows() const { return rows_; }
  uint64_t total_bytes() const;
  uint64_t total_messages() const;
  uint64_t max_edge_bytes() const;

  /// CSV with header: iteration,edge_u,edge_v,direction,messages,bytes
  /// where edge_u < edge_v and direction is "uv" or "vu".
  std::string to_csv() const;

  friend bool operator==(const TrafficLedger& a, const TrafficLedger& b) {
    return a.totals_ == b.totals_ && a.rows_ == b.rows_;
  }

 private:
  void flush_current();

  uint64_t current_iteration_ = 0;
  bool in_iteration_ = false;
  std::map<std::pair<uint32_t, uint32_t>, Counts> current_;
  std::map<std::pair<uint32_t, uint32_t>, Counts> totals_;
  std::vector<Row> rows_;
};

/// Per-client dedup and relay bookkeeping (the S_i / R_i sets).
struct ClientProtocolState {
  std::unordered_set<uint64_t> seen;     // ids applied or queued to apply
  std::vector<UpdateMessage> relay;      // received last hop, pending forward
  std::vector<UpdateMessage> pending;    // awaiting the round-barrier apply
};

/// First time a message became available at a client.
struct DeliveryRecord {
  uint64_t id_key = 0;
  uint32_t client = 0;
  uint64_t iteration = 0;  // iteration during which it arrived
  uint32_t hop = 0;        // hop index within that iteration; 0 = injection
};

struct HopStats {
  uint64_t deliveries = 0;  // first receptions this hop
  uint64_t sent = 0;        // messages placed on edges this hop
};

/// Synchronous flooding engine. Each hop is a barrier: every send completes
/// before any receive is processed. Messages newly seen during a round are
/// applied at the round barrier in canonical (iteration, origin) order,
/// which keeps floating-point sums identical at every client.
class FloodEngine {
 public:
  FloodEngine(const Topology& topo, TrafficLedger* ledger,
              bool exclude_sender = false, bool record_deliveries = false);

  /// Register a client's own fresh message: enters S_i, the relay set, and
  /// the pending-apply set.
  void inject(size_t client, const UpdateMessage& m, uint64_t iteration);

  using ApplyFn =
      std::function<void(size_t client, std::span<const UpdateMessage>)>;

  /// Run k hops, then apply every message that completed during this round.
  /// Relay queues persist across calls, which is what delayed flooding
  /// (k < D) relies on.
  std::vector<HopStats> run_hops(size_t k, uint64_t iteration,
                                 const ApplyFn& apply);

  const std::vector<DeliveryRecord>& deliveries() const { return records_; }
  const std::vector<ClientProtocolState>& states() const { return states_; }
  size_t pending_relay_total() const;

 private:
  const Topology* topo_;
  TrafficLedger* ledger_;
  bool exclude_sender_;
  bool record_;
  std::vector<ClientProtocolState> states_;
  // Origin of each relay entry, aligned with state.relay (sender exclusion).
  std::vector<std::vector<size_t>> relay_from_;
  std::unordered_map<uint64_t, UpdateMessage> registry_;
  std::vector<DeliveryRecord> records_;
};

/// Doubly-stochastic check used by every gossip entry point.
void validate_mixing(const MixingMatrix& w, double tol = 1e-12);

/// One dense gossip round: theta_i <- sum_j w_ij theta_j over all clients,
/// synchronously. Accounts dim*4 bytes per directed edge when a ledger and
/// topology are given.
template <typename T>
void gossip_average_dense(std::vector<ModelParams<T>*>& models,
                          const MixingMatrix& w, const Topology* topo,
                          TrafficLedger* ledger) {
  validate_mixing(w);
  const size_t n = models.size();
  std::vector<ModelParams<T>> old;
  old.reserve(n);
  for (auto* m : models) old.push_back(*m);
  for (size_t i = 0; i < n; ++i) {
    for (size_t l = 0; l < models[i]->layers.size(); ++l) {
      auto& dst = models[i]->layers[l].data;
      for (size_t e = 0; e < dst.size(); ++e) {
        double acc = 0.0;
        for (size_t j = 0; j < n; ++j) {
          const double wij = w.at(i, j);
          if (wij != 0.0) {
            acc += wij * static_cast<double>(old[j].layers[l].data[e]);
          }
        }
        dst[e] = static_cast<T>(acc);
      }
    }
  }
  if (ledger && topo) {
    const size_t dim = old.empty() ? 0 : old[0].total_dim();
    for (const auto& [u, v] : topo->edges()) {
      ledger->account(static_cast<uint32_t>(u), static_cast<uint32_t>(v), 1,
                      dense_wire_bytes(dim));
      ledger->account(static_cast<uint32_t>(v), static_cast<uint32_t>(u), 1,
                      dense_wire_bytes(dim));
    }
  }
}

/// Message-history coefficients of the seed-gossip diagnostic mode.
struct GossipSRState {
  std::unordered_map<uint64_t, double> coeffs;
};

/// One coefficient-mixing round over the union of neighbor histories:
/// c_i(m) <- sum_j w_ij c_j(m). Every changed coefficient triggers
/// apply_delta(client, id_key, delta_c) exactly once; the return value is
/// the number of such re-applications. Each client ships its full history
/// to each neighbor (that is the cost being demonstrated).
uint64_t gossip_sr_round(
    std::vector<GossipSRState>& states, const MixingMatrix& w,
    const Topology& topo, TrafficLedger* ledger,
    const std::function<void(size_t client, uint64_t id_key, double delta)>&
        apply_delta);

/// Magnitude top-k compression of a flattened tensor set. Ties break toward
/// the lower flat index; kept entries survive bit-exactly.
struct SparsePayload {
  size_t total_dim = 0;
  std::vector<uint32_t> indices;  // ascending flat indices
  std::vector<double> values;
};

template <typename T>
SparsePayload compress_topk(const ModelParams<T>& delta, double keep_fraction);

template <typename T>
void decompress_into(const SparsePayload& payload, ModelParams<T>& out);

}  // namespace seedflood
