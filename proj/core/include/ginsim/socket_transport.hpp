#pragma once

#include <condition_variable>
#include <cstdint>
#include <map>
#include <mutex>
#include <algorithm>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "ginsim/fabric.hpp"
#include "ginsim/wire.hpp"

namespace ginsim {

// Loopback TCP transport speaking the GIN1 wire format. One connection per
// ordered rank pair carries every context's Put/Signal frames from the dialer
// plus the Ack frames flowing back, so each channel's frames stay FIFO and
// only cross-channel reordering can occur. Rank 0 serves a control-plane
// rendezvous used for the hello/port exchange and for collective rounds
// (window registration, barriers).
//
// The latency model's base delay and jitter are honored as coarse wall-clock
// send deadlines applied by a per-rank writer thread (the only place the
// runtime ever sleeps on behalf of the model); reorder_window does not apply
// since connections are FIFO.
class SocketTransport final : public Transport {
 public:
  struct Options {
    RankId self = 0;
    uint32_t world_size = 0;
    std::string host = "127.0.0.1";
    uint16_t rendezvous_port = 0;
    uint64_t timeout_ms = 30'000;
    LatencyModel latency;
    std::string config_digest;  // compared across ranks during hello
  };

  SocketTransport(const Options& opt, DeliverySink& sink);
  ~SocketTransport() override;

  SocketTransport(const SocketTransport&) = delete;
  SocketTransport& operator=(const SocketTransport&) = delete;

  RankId rank() const override { return opt_.self; }

  uint64_t tx_put(const ChannelKey& key, WindowId dst_window, uint64_t dst_offset,
                  std::span<const std::byte> payload) override;
  uint64_t tx_signal(const ChannelKey& key, SignalId id, SignalOp op) override;
  size_t rx_progress() override;
  bool has_pending() const override;

  // Control-plane collectives (must be invoked in the same order on every
  // rank; each blocks until all ranks have joined the round).
  std::vector<uint64_t> gather_window_sizes(uint64_t my_size);
  void control_barrier();

 private:
  struct Conn {
    int fd = -1;
    FrameParser parser;
    bool open = false;
  };

  struct OutFrame {
    std::chrono::steady_clock::time_point deadline;
    uint64_t ticket;
    int fd;
    std::vector<std::byte> bytes;
    friend bool operator>(const OutFrame& a, const OutFrame& b) {
      return std::tie(a.deadline, a.ticket) > std::tie(b.deadline, b.ticket);
    }
  };

  void bootstrap();
  void accept_data_connections(int listen_fd);
  void control_server_main(int listen_fd);
  std::string control_request(const std::string& body);

  void check_tx_channel(const ChannelKey& key) const;
  void enqueue_frame(int fd, std::vector<std::byte> frame, bool apply_delay);
  void writer_main();
  size_t dispatch_frame(Conn& conn, ParsedFrame& f, bool from_inbound);

  void fail(std::exception_ptr e);
  void check_failed() const;

  Options opt_;
  DeliverySink& sink_;
  EndpointCore core_;

  std::mutex tx_mu_;  // serializes sequence assignment and delay sampling
  std::mt19937_64 delay_rng_;

  std::vector<Conn> inbound_;   // by src rank (their puts, our acks)
  std::vector<Conn> outbound_;  // by dst rank (our puts, their acks)
  int control_fd_ = -1;
  std::mutex control_mu_;
  FrameParser control_parser_;

  std::thread writer_;
  mutable std::mutex writer_mu_;
  std::condition_variable writer_cv_;
  std::vector<OutFrame> out_queue_;  // min-heap by (deadline, ticket)
  std::map<int, std::chrono::steady_clock::time_point> last_deadline_;  // per-fd FIFO clamp
  uint64_t next_ticket_ = 0;

  std::thread control_server_;
  std::atomic<bool> stop_{false};

  mutable std::mutex fail_mu_;
  std::exception_ptr failure_;
};

// Builds the socket-transport flavor of a communicator; rank 0 additionally
// hosts the rendezvous. Requires threaded progress.
class DevComm;
struct Config;
std::unique_ptr<DevComm> comm_init_socket(const std::string& host, uint16_t port,
                                          uint32_t world_size, RankId self, const Config& config);

// Picks a currently free loopback TCP port (for launchers).
uint16_t reserve_loopback_port();

}  // namespace ginsim
