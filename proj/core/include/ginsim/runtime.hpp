#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "ginsim/direct_backend.hpp"
#include "ginsim/fabric.hpp"
#include "ginsim/plugin.hpp"
#include "ginsim/proxy_backend.hpp"

namespace ginsim {

enum class TransportKind { Inproc, Socket };
enum class ProgressMode { Threaded, Manual };

const char* to_string(TransportKind k);

// Per-communicator configuration; every rank must pass the same one.
struct Config {
  uint32_t n_contexts = 4;
  std::optional<BackendKind> backend;  // unset = probe, direct first
  uint32_t signal_cells = 256;
  uint32_t counter_cells = 256;
  uint32_t queue_depth = 1024;  // proxy descriptor ring capacity
  uint64_t timeout_ms = 30'000;
  LatencyModel latency{.base_delay_ns = 500, .jitter_ns = 0, .reorder_window = 0,
                       .seed = 0x5EED, .line_rate_gbps = 16.0};
  // Threaded: a progress thread per rank pumps delivery; blocking waits poll.
  // Manual: no threads; blocking waits pump the whole group inline (single
  // caller thread drives all ranks — what the randomized suites use).
  ProgressMode progress = ProgressMode::Threaded;

  friend bool operator==(const Config& a, const Config& b);
};

// Applies GINSIM_BACKEND / GINSIM_SEED / GINSIM_LATENCY_NS / GINSIM_JITTER_NS /
// GINSIM_REORDER / GINSIM_QUEUE_DEPTH / GINSIM_TIMEOUT_MS on top of defaults.
Config config_from_env(Config base = {});

// comm pool helper: maps a flat channel/queue id onto (communicator, context).
struct PoolSelection {
  uint32_t comm_index;
  uint32_t context_index;
  friend bool operator==(const PoolSelection&, const PoolSelection&) = default;
};
constexpr PoolSelection pool_select(uint32_t id, uint32_t n_contexts = 4) {
  return {id / n_contexts, id % n_contexts};
}

// Reserved signal cells at the top of the signal table for barrier sessions:
// kBarrierSlots independent slots, each with one cell per dissemination step.
inline constexpr uint32_t kBarrierSlots = 8;
inline constexpr uint32_t kBarrierSteps = 8;  // teams up to 2^8 ranks

class DevComm;
class InProcGroup;

// In-process rendezvous shared by the ranks of one communicator: owns the
// simulated fabric, validates that every rank passed the same config, and
// brokers collective window registration.
class InProcGroup {
 public:
  static std::shared_ptr<InProcGroup> create(uint32_t world_size);
  ~InProcGroup();

  uint32_t world_size() const { return world_size_; }

  SimFabric* fabric();
  const SimFabric* fabric() const;

  // Manual-mode progress: pump every attached rank once; if nothing moved,
  // advance the virtual clock. Returns the amount of work done (0 = stuck).
  size_t pump_all();

 private:
  friend class DevComm;
  friend std::unique_ptr<DevComm> comm_init(std::shared_ptr<InProcGroup>, RankId, const Config&);

  explicit InProcGroup(uint32_t world_size);

  void attach(RankId rank, DevComm* comm, const Config& config);
  void detach(RankId rank);
  void mark_ready();  // endpoint and backend are up
  void await_all_ready(const Config& config);

  struct WindowReg {
    std::vector<uint64_t> sizes;
    std::vector<char> present;
    uint32_t count = 0;
    bool complete = false;
  };

  // Registers rank's buffer for its next window; when the last rank arrives,
  // finalizes the window on every attached comm. Returns the window id.
  WindowId register_window(RankId rank, uint64_t size);
  void await_window_complete(WindowId id, RankId rank, uint64_t timeout_ms);

  uint32_t world_size_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::optional<Config> config_;
  std::unique_ptr<SimFabric> fabric_;
  std::vector<DevComm*> comms_;
  uint32_t attached_ = 0;
  uint32_t ready_ = 0;
  std::vector<WindowReg> window_regs_;
  std::vector<uint32_t> next_window_;
};

// One rank's communicator: transport endpoint, window registry, signal and
// counter tables, the chosen backend, and (in threaded mode) the progress
// agent that drives delivery and completion retirement.
class DevComm final : public DeliverySink, public WindowTable {
 public:
  ~DevComm() override;

  DevComm(const DevComm&) = delete;
  DevComm& operator=(const DevComm&) = delete;

  RankId rank() const { return rank_; }
  uint32_t world_size() const { return world_size_; }
  const Config& config() const { return config_; }
  BackendKind backend() const { return backend_; }
  TransportKind transport_kind() const { return transport_kind_; }
  ProgressMode progress_mode() const { return config_.progress; }
  const Team& world_team() const { return world_team_; }

  // Collective: every rank contributes a buffer (sizes may differ; empty is
  // allowed). All ranks see the same dense WindowId, assigned in registration
  // order. The caller keeps ownership of the bytes and must outlive traffic.
  Window& window_register(std::span<std::byte> local);

  Window& lookup_window(WindowId id) override;

  // Registers a sub-team (world is id 0, always present). Members must be
  // world ranks; the id must be unused.
  const Team& register_team(Team team);
  const Team& team(TeamId id) const;

  // --- completion cells ---
  uint64_t read_signal(SignalId id) const;
  void wait_signal(SignalId id, uint64_t expected);  // returns when cell >= expected
  void reset_signal(SignalId id);
  uint64_t read_counter(CounterId id) const;
  void wait_counter(CounterId id, uint64_t expected);
  void reset_counter(CounterId id);

  // Blocks until every op posted to ctx before this call is locally complete
  // (placed remotely and acked); source ranges are then reusable. Makes no
  // remote-visibility promise: a racing remote reader may still miss the data
  // until a signal arrives.
  void flush(ContextId ctx);

  // --- progress ---
  // Rank-local progress pass: inbound delivery plus backend completion work.
  // Threaded mode runs this on the progress thread; tests and manual mode may
  // call it directly.
  size_t pump_local();
  uint64_t virtual_now() const;

  void check_failed() const;

  struct CellSnapshot {
    std::vector<uint64_t> signals;
    std::vector<uint64_t> counters;
    friend bool operator==(const CellSnapshot&, const CellSnapshot&) = default;
  };
  CellSnapshot snapshot_cells() const;

  // Used by Gin: validates and routes one operation to the backend.
  void submit_op(ContextId ctx, const Team& team, uint32_t peer_team_rank, Opcode opcode,
                 WindowId dst_window, uint64_t dst_offset, WindowId src_window,
                 uint64_t src_offset_or_value, uint64_t bytes, const CompletionAction& action);

  FabricPlugin& plugin() { return *plugin_; }
  ProxyBackend* proxy_backend() { return proxy_.get(); }

  // Polls pred cooperatively (pumping in manual mode) until it holds; throws
  // Timeout after config().timeout_ms, or immediately on a manual-mode
  // deadlock (nothing pending anywhere and pred false).
  void wait_until(const std::function<bool()>& pred, const char* what);

 private:
  friend class InProcGroup;
  friend std::unique_ptr<DevComm> comm_init(std::shared_ptr<InProcGroup>, RankId, const Config&);
  friend std::unique_ptr<DevComm> comm_init_socket(const std::string& host, uint16_t port,
                                                   uint32_t world_size, RankId self,
                                                   const Config& config);

  DevComm(RankId rank, uint32_t world_size, Config config);

  void init_backend();
  void start_progress_thread();
  void stop_progress_thread();
  void progress_main();
  void set_failure(std::exception_ptr e);
  bool advance_time();  // virtual clock (inproc only)
  void bump_counter(CounterId id);
  void finalize_window(WindowId id, std::vector<uint64_t> sizes);
  std::vector<uint64_t> socket_gather_window_sizes(uint64_t my_size);
  void socket_control_barrier();

  // DeliverySink
  std::span<std::byte> sink_window_bytes(WindowId w, uint64_t offset, uint64_t len) override;
  void sink_apply_signal(SignalId id, const SignalOp& op) override;
  void sink_on_ack(const ChannelKey& channel, uint64_t seq) override;

  RankId rank_;
  uint32_t world_size_;
  Config config_;
  BackendKind backend_ = BackendKind::Direct;
  TransportKind transport_kind_ = TransportKind::Inproc;
  Team world_team_;
  std::map<TeamId, Team> teams_;

  std::shared_ptr<InProcGroup> group_;           // inproc
  std::unique_ptr<Transport> owned_transport_;   // socket
  Transport* transport_ = nullptr;

  std::unique_ptr<std::atomic<uint64_t>[]> signals_;
  std::unique_ptr<std::atomic<uint64_t>[]> counters_;
  std::unique_ptr<std::atomic<uint32_t>[]> counter_pending_;

  mutable std::mutex win_mu_;
  std::deque<Window> windows_;
  std::deque<std::span<std::byte>> window_buffers_;  // pending local regions

  std::unique_ptr<FabricPlugin> plugin_;
  std::unique_ptr<ProxyBackend> proxy_;
  std::vector<DirectContext*> direct_ctx_;

  std::thread progress_thread_;
  std::atomic<bool> stop_{false};
  mutable std::mutex fail_mu_;
  std::exception_ptr failure_;
};

// Collective communicator construction over the in-process group. Threaded
// mode blocks until every rank has arrived; manual mode returns immediately
// (validation against the first arriver's config still applies).
std::unique_ptr<DevComm> comm_init(std::shared_ptr<InProcGroup> group, RankId self,
                                   const Config& config);

// Socket-transport construction; rank 0 serves the rendezvous on `port`.
std::unique_ptr<DevComm> comm_init_socket(const std::string& host, uint16_t port,
                                          uint32_t world_size, RankId self, const Config& config);

// Per-context handle mirroring the device-side object: all data movement and
// completion state operations hang off one of these.
class Gin {
 public:
  Gin(DevComm& comm, ContextId context_index);

  DevComm& comm() { return comm_; }
  ContextId context() const { return ctx_; }

  void put(const Team& team, uint32_t peer, const Window& dst_window, uint64_t dst_offset,
           const Window& src_window, uint64_t src_offset, uint64_t bytes,
           const CompletionAction& action = {});

  // Inline write of an up-to-8-byte scalar; no source window involved. The
  // value's bytes land little-endian at the target.
  template <typename T>
  void put_value(const Team& team, uint32_t peer, const Window& dst_window, uint64_t dst_offset,
                 T value, const CompletionAction& action = {}) {
    static_assert(std::is_trivially_copyable_v<T> && sizeof(T) <= 8,
                  "inline values are at most 8 trivially copyable bytes");
    unsigned char raw[8] = {};
    __builtin_memcpy(raw, &value, sizeof(T));
    uint64_t packed = 0;
    for (size_t i = 0; i < sizeof(T); ++i) packed |= static_cast<uint64_t>(raw[i]) << (8 * i);
    put_value_raw(team, peer, dst_window, dst_offset, packed, sizeof(T), action);
  }

  void put_value_raw(const Team& team, uint32_t peer, const Window& dst_window,
                     uint64_t dst_offset, uint64_t le_value, uint32_t width,
                     const CompletionAction& action = {});

  // Standalone signal: ordered after all prior puts on this (context, peer)
  // channel per the watermark rule.
  void signal(const Team& team, uint32_t peer, SignalId id, SignalOp op = SignalOp::inc(),
              const CompletionAction& action = {});

  void flush() { comm_.flush(ctx_); }

  uint64_t read_signal(SignalId id) const { return comm_.read_signal(id); }
  void wait_signal(SignalId id, uint64_t expected) { comm_.wait_signal(id, expected); }
  void reset_signal(SignalId id) { comm_.reset_signal(id); }
  uint64_t read_counter(CounterId id) const { return comm_.read_counter(id); }
  void wait_counter(CounterId id, uint64_t expected) { comm_.wait_counter(id, expected); }
  void reset_counter(CounterId id) { comm_.reset_counter(id); }

 private:
  DevComm& comm_;
  ContextId ctx_;
};

// Dissemination barrier over a team, built from zero-byte put+SignalInc
// rounds on reserved signal cells. Reusable across rounds; concurrent
// sessions must use distinct slots. Arrival-only semantics: pre-barrier puts
// need an explicit flush if the caller wants local completion first.
class BarrierSession {
 public:
  BarrierSession(Gin& gin, Team team, uint32_t slot);

  // No member returns before every member has entered this round.
  void sync();

  uint64_t round() const { return round_; }

 private:
  Gin& gin_;
  Team team_;
  uint32_t slot_;
  uint32_t my_index_;
  uint64_t round_ = 0;
};

}  // namespace ginsim
