#pragma once

#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <queue>
#include <random>
#include <set>
#include <span>
#include <thread>
#include <variant>
#include <vector>

#include "ginsim/types.hpp"

namespace ginsim {

// Delivery behavior of the simulated network. Delays are virtual nanoseconds;
// nothing here ever sleeps. reorder_window bounds how many earlier messages a
// later one may overtake on the same channel (0 = per-channel FIFO). The same
// seed and the same submission trace reproduce the same delivery schedule.
struct LatencyModel {
  uint64_t base_delay_ns = 0;
  uint64_t jitter_ns = 0;  // uniform in [0, jitter_ns]
  uint32_t reorder_window = 0;
  uint64_t seed = 0;
  // Serialization term: delay grows by bytes / line_rate_gbps ns (GB/s is
  // bytes-per-ns). 0 disables the term. Not part of the wire contract; it
  // exists so message size shows up in virtual latency.
  double line_rate_gbps = 0.0;
};

// Sequence numbers, ordering, and the watermark rule are all scoped to one of
// these. Traffic on different ChannelKeys is never ordered.
struct ChannelKey {
  RankId src = 0;
  ContextId context = 0;
  RankId dst = 0;

  friend auto operator<=>(const ChannelKey&, const ChannelKey&) = default;
};

struct PutBody {
  uint64_t seq = 0;
  WindowId dst_window = 0;
  uint64_t dst_offset = 0;
  std::vector<std::byte> payload;
};

struct SignalBody {
  uint64_t watermark = 0;  // greatest put seq issued on the channel before it
  SignalId id = 0;
  SignalOp op;
};

struct AckBody {
  uint64_t ack_seq = 0;
};

struct FabricMessage {
  ChannelKey channel;
  std::variant<PutBody, SignalBody, AckBody> body;
};

// Where delivered messages land. Implemented by the runtime (windows, signal
// cells, backend completion hooks); tests substitute their own.
class DeliverySink {
 public:
  virtual ~DeliverySink() = default;
  // Validated bytes of the local slice of a window; throws OutOfBounds /
  // UnknownWindow, which marks the run failed (a protocol bug, never dropped).
  virtual std::span<std::byte> sink_window_bytes(WindowId w, uint64_t offset, uint64_t len) = 0;
  virtual void sink_apply_signal(SignalId id, const SignalOp& op) = 0;
  // Sender-side local completion: the put with this seq has been placed
  // remotely. Fires exactly once per seq.
  virtual void sink_on_ack(const ChannelKey& channel, uint64_t seq) = 0;
};

// Transport-independent endpoint state: per-channel send sequences plus the
// receive-side apply logic shared by the simulated fabric and the socket
// transport.
//
// Receive rules per channel:
//   - applied_prefix = largest n with every put seq <= n applied.
//   - A put is copied into its window immediately on delivery and acked.
//   - A signal applies only once applied_prefix >= its watermark; until then
//     it is held. Held signals release in (watermark, arrival) order.
class EndpointCore {
 public:
  explicit EndpointCore(RankId self) : self_(self) {}

  RankId self() const { return self_; }

  // Sender side; caller serializes per channel.
  uint64_t next_put_seq(const ChannelKey& key) { return ++tx_[key]; }
  uint64_t current_watermark(const ChannelKey& key) {
    auto it = tx_.find(key);
    return it == tx_.end() ? 0 : it->second;
  }

  // Receiver side; caller is the owning progress agent. Returns how many
  // messages were applied (a put that releases held signals counts them too).
  // send_ack is invoked for every applied put.
  size_t handle(const FabricMessage& msg, DeliverySink& sink,
                const std::function<void(const ChannelKey&, uint64_t)>& send_ack);

 private:
  struct RxChannel {
    uint64_t applied_prefix = 0;
    std::set<uint64_t> out_of_order;  // applied put seqs above the prefix
    struct Held {
      uint64_t watermark;
      uint64_t arrival;
      SignalBody body;
    };
    std::vector<Held> held_signals;
    uint64_t arrivals = 0;
  };

  size_t release_held(RxChannel& rx, DeliverySink& sink);

  RankId self_;
  std::map<ChannelKey, uint64_t> tx_;  // last issued put seq
  std::map<ChannelKey, RxChannel> rx_;
};

// What a backend needs from the wire: issue puts/signals on a channel and
// drive inbound delivery. Implemented by SimEndpoint and SocketTransport.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual RankId rank() const = 0;
  virtual uint64_t tx_put(const ChannelKey& key, WindowId dst_window, uint64_t dst_offset,
                          std::span<const std::byte> payload) = 0;
  virtual uint64_t tx_signal(const ChannelKey& key, SignalId id, SignalOp op) = 0;
  virtual size_t rx_progress() = 0;
  // True when inbound work can still arrive without new submissions.
  virtual bool has_pending() const = 0;
};

// One delivered message, for determinism and schedule checks.
struct DeliveryRecord {
  uint64_t time = 0;
  ChannelKey channel;
  char kind = '?';  // 'P' put, 'S' signal, 'A' ack
  uint64_t seq_or_watermark = 0;

  friend bool operator==(const DeliveryRecord&, const DeliveryRecord&) = default;
};

// Record of a tx_* call, for posting-identity checks.
struct TxRecord {
  ChannelKey channel;
  char kind = '?';
  uint64_t seq_or_watermark = 0;
  std::thread::id issuer;
};

class SimFabric;

// A rank's attachment to the simulated fabric. tx_* may be called from any
// number of submitter agents (sequence assignment is serialized inside);
// rx_progress must only run on the endpoint's owning progress agent.
class SimEndpoint final : public Transport {
 public:
  SimEndpoint(const SimEndpoint&) = delete;
  SimEndpoint& operator=(const SimEndpoint&) = delete;

  RankId rank() const override { return core_.self(); }

  // Enqueues a Put with the next sequence number on the channel and a sampled
  // delivery delay; the payload is snapshotted here. Returns the seq.
  uint64_t tx_put(const ChannelKey& key, WindowId dst_window, uint64_t dst_offset,
                  std::span<const std::byte> payload) override;

  // Enqueues a Signal carrying the channel's current watermark; returns it.
  uint64_t tx_signal(const ChannelKey& key, SignalId id, SignalOp op) override;

  // Delivers every inbound message whose virtual delivery time has arrived.
  size_t rx_progress() override;

  bool has_pending() const override;

 private:
  friend class SimFabric;
  SimEndpoint(SimFabric& fabric, RankId self, std::vector<RankId> peers, DeliverySink& sink)
      : fabric_(fabric), core_(self), peers_(std::move(peers)), sink_(sink) {}

  void check_channel(const ChannelKey& key) const;

  SimFabric& fabric_;
  EndpointCore core_;
  std::vector<RankId> peers_;
  DeliverySink& sink_;
};

// Deterministic-seeded virtual-time network shared by every rank of a run.
// Messages are queued with sampled delivery times; the virtual clock advances
// only when a caller with no deliverable work asks for it (try_advance), so a
// run consumes no wall time waiting on simulated latency.
class SimFabric {
 public:
  explicit SimFabric(LatencyModel model);
  ~SimFabric();

  SimFabric(const SimFabric&) = delete;
  SimFabric& operator=(const SimFabric&) = delete;

  // Registers rank `self` with channels to `peers` (a rank may appear as its
  // own peer for loopback). Throws DuplicateEndpoint on a second open for the
  // same rank. The returned endpoint lives as long as the fabric.
  SimEndpoint& open_endpoint(RankId self, std::vector<RankId> peers, DeliverySink& sink);

  const LatencyModel& model() const { return model_; }

  uint64_t now() const;

  // Jumps the clock to the earliest pending delivery if nothing is deliverable
  // at the current time. Returns true when the clock moved.
  bool try_advance();

  bool has_pending() const;

  // A delivery-side failure (OutOfBounds from a misrouted put) poisons the
  // whole run; every later fabric call rethrows it.
  void mark_failed(std::exception_ptr e);
  void check_failed() const;

  void set_delivery_log_enabled(bool on);
  std::vector<DeliveryRecord> delivery_log() const;
  void set_tx_log_enabled(bool on);
  std::vector<TxRecord> tx_log() const;

 private:
  friend class SimEndpoint;

  struct Event {
    uint64_t time;
    uint64_t ticket;
    FabricMessage msg;
    // Min-heap on (time, ticket); ticket breaks ties in enqueue order.
    friend bool operator>(const Event& a, const Event& b) {
      return std::tie(a.time, a.ticket) > std::tie(b.time, b.ticket);
    }
  };

  struct DirectionState {
    std::mt19937_64 rng;
    std::deque<uint64_t> recent;  // delivery times of the last window+1 sends
  };

  struct EndpointSlot {
    std::unique_ptr<SimEndpoint> endpoint;
    std::vector<Event> inbound;  // heap via std::push_heap/pop_heap, greater<>
  };

  // All under mu_.
  uint64_t sample_delay(DirectionState& dir, size_t payload_bytes);
  DirectionState& direction_state(const ChannelKey& key, bool reverse);
  void enqueue(RankId dst, FabricMessage&& msg, uint64_t delay_source_bytes, bool reverse_dir);
  void record_tx(const ChannelKey& key, char kind, uint64_t seq_or_watermark);

  mutable std::mutex mu_;
  LatencyModel model_;
  uint64_t virtual_now_ = 0;
  uint64_t next_ticket_ = 0;
  std::map<RankId, EndpointSlot> endpoints_;
  std::map<std::pair<ChannelKey, bool>, DirectionState> directions_;
  std::exception_ptr failure_;
  bool log_deliveries_ = false;
  std::vector<DeliveryRecord> delivery_log_;
  bool log_tx_ = false;
  std::vector<TxRecord> tx_log_;
};

}  // namespace ginsim
