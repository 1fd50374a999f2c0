#include "seedflood/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "seedflood/errors.hpp"

namespace seedflood {

namespace {

template <typename T>
void put_le(uint8_t* dst, T value) {
  for (size_t i = 0; i < sizeof(T); ++i) {
    dst[i] = static_cast<uint8_t>(value >> (8 * i));
  }
}

template <typename T>
T get_le(const uint8_t* src) {
  T value = 0;
  for (size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(src[i]) << (8 * i);
  }
  return value;
}

}  // namespace

std::array<uint8_t, kMessageWireBytes> encode_message(const UpdateMessage& m) {
  std::array<uint8_t, kMessageWireBytes> out{};
  put_le<uint32_t>(out.data(), m.id.origin);
  put_le<uint32_t>(out.data() + 4, m.id.iteration);
  put_le<uint64_t>(out.data() + 8, m.seed);
  uint64_t coef_bits;
  std::memcpy(&coef_bits, &m.coefficient, 8);
  put_le<uint64_t>(out.data() + 16, coef_bits);
  put_le<uint32_t>(out.data() + 24, m.epoch);
  return out;
}

UpdateMessage decode_message(std::span<const uint8_t> bytes) {
  if (bytes.size() != kMessageWireBytes) {
    throw CorruptedMessageError("decode_message: wrong wire size");
  }
  UpdateMessage m;
  m.id.origin = get_le<uint32_t>(bytes.data());
  m.id.iteration = get_le<uint32_t>(bytes.data() + 4);
  m.seed = get_le<uint64_t>(bytes.data() + 8);
  const uint64_t coef_bits = get_le<uint64_t>(bytes.data() + 16);
  std::memcpy(&m.coefficient, &coef_bits, 8);
  m.epoch = get_le<uint32_t>(bytes.data() + 24);
  return m;
}

void TrafficLedger::begin_iteration(uint64_t t) {
  flush_current();
  current_iteration_ = t;
  in_iteration_ = true;
}

void TrafficLedger::account(uint32_t from, uint32_t to, uint64_t messages,
                            uint64_t bytes) {
  auto& cur = current_[{from, to}];
  cur.messages += messages;
  cur.bytes += bytes;
  auto& tot = totals_[{from, to}];
  tot.messages += messages;
  tot.bytes += bytes;
}

void TrafficLedger::finish() { flush_current(); }

void TrafficLedger::flush_current() {
  if (!in_iteration_) {
    current_.clear();
    return;
  }
  for (const auto& [edge, counts] : current_) {
    if (counts.messages == 0 && counts.bytes == 0) continue;
    rows_.push_back(Row{current_iteration_, edge.first, edge.second,
                        counts.messages, counts.bytes});
  }
  current_.clear();
  in_iteration_ = false;
}

uint64_t TrafficLedger::total_bytes() const {
  uint64_t total = 0;
  for (const auto& [edge, counts] : totals_) total += counts.bytes;
  return total;
}

uint64_t TrafficLedger::total_messages() const {
  uint64_t total = 0;
  for (const auto& [edge, counts] : totals_) total += counts.messages;
  return total;
}

uint64_t TrafficLedger::max_edge_bytes() const {
  uint64_t best = 0;
  for (const auto& [edge, counts] : totals_) {
    best = std::max(best, counts.bytes);
  }
  return best;
}

std::string TrafficLedger::to_csv() const {
  std::ostringstream out;
  out << "iteration,edge_u,edge_v,direction,messages,bytes\n";
  for (const auto& r : rows_) {
    const uint32_t u = std::min(r.from, r.to);
    const uint32_t v = std::max(r.from, r.to);
    const char* dir = (r.from == u) ? "uv" : "vu";
    out << r.iteration << ',' << u << ',' << v << ',' << dir << ','
        << r.messages << ',' << r.bytes << '\n';
  }
  return out.str();
}

FloodEngine::FloodEngine(const Topology& topo, TrafficLedger* ledger,
                         bool exclude_sender, bool record_deliveries)
    : topo_(&topo),
      ledger_(ledger),
      exclude_sender_(exclude_sender),
      record_(record_deliveries),
      states_(topo.n),
      relay_from_(topo.n) {}

void FloodEngine::inject(size_t client, const UpdateMessage& m,
                         uint64_t iteration) {
  auto [it, inserted] = registry_.emplace(m.id.key(), m);
  if (!inserted && !(it->second == m)) {
    throw CorruptedMessageError("inject: duplicate id, differing payload");
  }
  auto& st = states_[client];
  if (!st.seen.insert(m.id.key()).second) {
    throw CorruptedMessageError("inject: id already seen at origin");
  }
  st.relay.push_back(m);
  relay_from_[client].push_back(client);  // own message: no exclusions
  st.pending.push_back(m);
  if (record_) {
    records_.push_back(DeliveryRecord{m.id.key(), static_cast<uint32_t>(client),
                                      iteration, 0});
  }
}

std::vector<HopStats> FloodEngine::run_hops(size_t k, uint64_t iteration,
                                            const ApplyFn& apply) {
  const size_t n = topo_->n;
  std::vector<HopStats> stats(k);

  for (size_t hop = 1; hop <= k; ++hop) {
    auto& hop_stats = stats[hop - 1];
    // Send phase: every relay entry goes to every neighbor (minus the
    // neighbor it came from when sender exclusion is on).
    std::vector<std::vector<std::pair<UpdateMessage, size_t>>> inbox(n);
    for (size_t i = 0; i < n; ++i) {
      const auto& st = states_[i];
      for (size_t m = 0; m < st.relay.size(); ++m) {
        for (size_t j : topo_->adjacency[i]) {
          if (exclude_sender_ && relay_from_[i][m] == j) continue;
          inbox[j].emplace_back(st.relay[m], i);
          ++hop_stats.sent;
          if (ledger_) {
            ledger_->account(static_cast<uint32_t>(i),
                             static_cast<uint32_t>(j), 1, kMessageWireBytes);
          }
        }
      }
    }
    // Receive phase: dedup against S_i, keep first receptions for the next
    // hop's relay and the round barrier's apply set.
    for (size_t j = 0; j < n; ++j) {
      auto& st = states_[j];
      st.relay.clear();
      relay_from_[j].clear();
      for (const auto& [msg, from] : inbox[j]) {
        const auto reg = registry_.find(msg.id.key());
        if (reg == registry_.end()) {
          throw CorruptedMessageError("receive: message was never injected");
        }
        if (!(reg->second == msg)) {
          throw CorruptedMessageError(
              "receive: duplicate id, differing payload");
        }
        if (!st.seen.insert(msg.id.key()).second) continue;
        st.relay.push_back(msg);
        relay_from_[j].push_back(from);
        st.pending.push_back(msg);
        ++hop_stats.deliveries;
        if (record_) {
          records_.push_back(DeliveryRecord{msg.id.key(),
                                            static_cast<uint32_t>(j),
                                            iteration,
                                            static_cast<uint32_t>(hop)});
        }
      }
    }
  }

  // Round barrier: canonical (iteration, origin) application order.
  for (size_t i = 0; i < n; ++i) {
    auto& st = states_[i];
    std::sort(st.pending.begin(), st.pending.end(),
              [](const UpdateMessage& a, const UpdateMessage& b) {
                return a.id < b.id;
              });
    if (apply) apply(i, std::span<const UpdateMessage>(st.pending));
    st.pending.clear();
  }
  return stats;
}

size_t FloodEngine::pending_relay_total() const {
  size_t total = 0;
  for (const auto& st : states_) total += st.relay.size();
  return total;
}

void validate_mixing(const MixingMatrix& w, double tol) {
  const size_t n = w.n;
  for (size_t i = 0; i < n; ++i) {
    double row = 0.0, col = 0.0;
    for (size_t j = 0; j < n; ++j) {
      if (w.at(i, j) < 0.0) {
        throw InvalidMixingError("mixing matrix has a negative entry");
      }
      if (w.at(i, j) != w.at(j, i)) {
        throw InvalidMixingError("mixing matrix is not symmetric");
      }
      row += w.at(i, j);
      col += w.at(j, i);
    }
    if (std::abs(row - 1.0) > tol || std::abs(col - 1.0) > tol) {
      throw InvalidMixingError("mixing matrix is not doubly stochastic");
    }
  }
}

uint64_t gossip_sr_round(
    std::vector<GossipSRState>& states, const MixingMatrix& w,
    const Topology& topo, TrafficLedger* ledger,
    const std::function<void(size_t client, uint64_t id_key, double delta)>&
        apply_delta) {
  validate_mixing(w);
  const size_t n = states.size();

  if (ledger) {
    for (size_t i = 0; i < n; ++i) {
      const uint64_t entries = states[i].coeffs.size();
      for (size_t j : topo.adjacency[i]) {
        ledger->account(static_cast<uint32_t>(i), static_cast<uint32_t>(j),
                        entries, entries * kMessageWireBytes);
      }
    }
  }

  // Union of histories each client can see this round, in canonical order.
  std::vector<std::vector<uint64_t>> unions(n);
  for (size_t i = 0; i < n; ++i) {
    auto& keys = unions[i];
    for (const auto& [key, c] : states[i].coeffs) keys.push_back(key);
    for (size_t j : topo.adjacency[i]) {
      for (const auto& [key, c] : states[j].coeffs) keys.push_back(key);
    }
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  }

  uint64_t reapplications = 0;
  std::vector<GossipSRState> next(n);
  for (size_t i = 0; i < n; ++i) {
    for (uint64_t key : unions[i]) {
      double acc = 0.0;
      auto self = states[i].coeffs.find(key);
      const double c_old = (self == states[i].coeffs.end()) ? 0.0
                                                            : self->second;
      acc += w.at(i, i) * c_old;
      for (size_t j : topo.adjacency[i]) {
        auto it = states[j].coeffs.find(key);
        if (it != states[j].coeffs.end()) acc += w.at(i, j) * it->second;
      }
      next[i].coeffs[key] = acc;
      if (acc != c_old) {
        ++reapplications;
        if (apply_delta) apply_delta(i, key, acc - c_old);
      }
    }
  }
  states = std::move(next);
  return reapplications;
}

template <typename T>
SparsePayload compress_topk(const ModelParams<T>& delta, double keep_fraction) {
  if (!(keep_fraction > 0.0) || keep_fraction > 1.0) {
    throw std::invalid_argument("compress_topk: keep fraction not in (0,1]");
  }
  const size_t d = delta.total_dim();
  const size_t kept = std::min(
      d, static_cast<size_t>(std::ceil(keep_fraction * static_cast<double>(d))));

  std::vector<std::pair<double, uint32_t>> mag;  // (|v|, flat index)
  mag.reserve(d);
  uint32_t flat = 0;
  for (const auto& layer : delta.layers) {
    for (const T v : layer.data) {
      mag.emplace_back(std::abs(static_cast<double>(v)), flat++);
    }
  }
  std::nth_element(mag.begin(), mag.begin() + kept, mag.end(),
                   [](const auto& a, const auto& b) {
                     if (a.first != b.first) return a.first > b.first;
                     return a.second < b.second;
                   });
  mag.resize(kept);
  std::sort(mag.begin(), mag.end(),
            [](const auto& a, const auto& b) { return a.second < b.second; });

  SparsePayload payload;
  payload.total_dim = d;
  payload.indices.reserve(kept);
  payload.values.reserve(kept);
  // Second pass picks values bit-exactly by flat index.
  std::vector<double> flat_values(d);
  flat = 0;
  for (const auto& layer : delta.layers) {
    for (const T v : layer.data) flat_values[flat++] = static_cast<double>(v);
  }
  for (const auto& [m, idx] : mag) {
    payload.indices.push_back(idx);
    payload.values.push_back(flat_values[idx]);
  }
  return payload;
}

template <typename T>
void decompress_into(const SparsePayload& payload, ModelParams<T>& out) {
  if (out.total_dim() != payload.total_dim) {
    throw std::invalid_argument("decompress_into: dimension mismatch");
  }
  for (auto& layer : out.layers) {
    std::fill(layer.data.begin(), layer.data.end(), T(0));
  }
  size_t k = 0;
  size_t offset = 0;
  for (auto& layer : out.layers) {
    const size_t end = offset + layer.size();
    while (k < payload.indices.size() && payload.indices[k] < end) {
      layer.data[payload.indices[k] - offset] =
          static_cast<T>(payload.values[k]);
      ++k;
    }
    offset = end;
  }
}

template SparsePayload compress_topk<double>(const ModelParams<double>&,
                                             double);
template SparsePayload compress_topk<float>(const ModelParams<float>&, double);
template void decompress_into<double>(const SparsePayload&,
                                      ModelParams<double>&);
template void decompress_into<float>(const SparsePayload&, ModelParams<float>&);

}  // namespace seedflood
