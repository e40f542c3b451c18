#include <mutex>
#include <string>

#include "ginsim/harness.hpp"

namespace ginsim {

namespace {

// (rank, round)-tagged payload byte; the receiver recomputes it, so no
// expected data ever travels out of band.
std::byte ring_byte(RankId sender, uint32_t round, uint64_t i) {
  return static_cast<std::byte>(sender * 131 + round * 31 + i * 7 + 1);
}

}  // namespace

void ring_rank_program(DevComm& comm, const RingOptions& ring, RankState* out) {
  const uint32_t n = comm.world_size();
  const RankId r = comm.rank();
  const uint64_t S = ring.bytes;
  const Team& world = comm.world_team();

  std::vector<std::byte> send_buf(n * S), recv_buf(n * S);
  Window& send_win = comm.window_register(send_buf);
  Window& recv_win = comm.window_register(recv_buf);

  Gin gin(comm, 0);
  BarrierSession barrier(gin, world, 0);
  const uint32_t peer = (r + 1) % n;
  const RankId pred = (r + n - 1) % n;

  for (uint32_t round = 0; round < ring.rounds; ++round) {
    for (uint64_t i = 0; i < S; ++i) send_buf[peer * S + i] = ring_byte(r, round, i);

    gin.put(world, peer, recv_win, r * S, send_win, peer * S, S,
            CompletionAction::signal(0, SignalOp::inc()));

    gin.wait_signal(0, 1);
    for (uint64_t i = 0; i < S; ++i) {
      if (recv_buf[pred * S + i] != ring_byte(pred, round, i)) {
        throw VerificationFailure("ring: rank " + std::to_string(r) + " round " +
                                  std::to_string(round) + ": first mismatch at offset " +
                                  std::to_string(pred * S + i));
      }
    }
    gin.reset_signal(0);
    gin.flush();     // sources reusable before the next round overwrites them
    barrier.sync();  // no peer may signal round+1 before everyone reset
  }

  if (out) {
    out->windows.push_back({send_buf.begin(), send_buf.end()});
    out->windows.push_back({recv_buf.begin(), recv_buf.end()});
    out->cells = comm.snapshot_cells();
  }
}

RingReport run_ring(const LaunchOptions& opts, const RingOptions& ring) {
  if (opts.ranks < 2) throw UsageError("ring exchange needs at least 2 ranks");
  RingReport report;
  report.ranks = opts.ranks;
  report.rounds = ring.rounds;
  report.state.resize(opts.ranks);

  launch(opts, [&](DevComm& comm) {
    ring_rank_program(comm, ring, &report.state[comm.rank()]);
  });
  return report;
}

}  // namespace ginsim
