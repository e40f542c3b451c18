#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ginsim/runtime.hpp"

namespace ginsim {

// How to run a multi-rank program: one agent thread per rank, over the
// in-process fabric or loopback sockets. Demos force threaded progress.
struct LaunchOptions {
  uint32_t ranks = 2;
  TransportKind transport = TransportKind::Inproc;
  Config config;
  std::string host = "127.0.0.1";
  uint16_t port = 0;  // socket rendezvous; 0 picks a free port
};

// Runs `program` once per rank, joins all agents, tears the communicators
// down, and rethrows the first rank failure.
void launch(const LaunchOptions& opts, const std::function<void(DevComm&)>& program);

// Same, but each rank gets a pool of communicators (for channel counts beyond
// one comm's contexts). Socket mode uses ports base..base+n_comms-1.
void launch_pool(const LaunchOptions& opts, uint32_t n_comms,
                 const std::function<void(std::vector<DevComm*>&)>& program);

// Spawns `ranks` copies of `exe` with args + {"--rank", i}; waits for all.
// Throws ChildFailure if any child exits nonzero or dies on a signal.
void launch_processes(const std::string& exe, const std::vector<std::string>& args,
                      uint32_t ranks);

// Snapshot of everything a rank's program can observe at the end of a run;
// two backends are equivalent when these match.
struct RankState {
  std::vector<std::vector<std::byte>> windows;
  DevComm::CellSnapshot cells;
  friend bool operator==(const RankState&, const RankState&) = default;
};
using FinalState = std::vector<RankState>;

// --- ring exchange (unidirectional, per round: put+SignalInc, wait, reset) ---

struct RingOptions {
  uint64_t bytes = 4096;
  uint32_t rounds = 10;
};

struct RingReport {
  uint32_t ranks = 0;
  uint32_t rounds = 0;
  FinalState state;
};

// Throws VerificationFailure (with the first mismatching offset) on corrupt
// payloads; UsageError for ranks < 2.
RingReport run_ring(const LaunchOptions& opts, const RingOptions& ring);
void ring_rank_program(DevComm& comm, const RingOptions& ring, RankState* out);

// --- microbenchmarks ---

struct BenchConfig {
  std::vector<uint64_t> sizes = default_sizes();
  uint32_t iters = 100;
  uint32_t warmup = 10;
  bool wall_clock = false;  // virtual time by default (deterministic)
  std::string csv_path;     // written when non-empty

  static std::vector<uint64_t> default_sizes();  // 4 B .. 4 MiB, x2 steps
};

struct BenchRow {
  uint64_t size_bytes = 0;
  uint32_t iters = 0;
  uint64_t p50_ns = 0;
  uint64_t p99_ns = 0;
  double mean_ns = 0;
};

// Rank 0 puts+SignalInc to rank 1 and waits for the return signal; reports
// round-trip stats per size. Exactly 2 ranks.
std::vector<BenchRow> run_pingpong(const LaunchOptions& opts, const BenchConfig& bench);

// One-directional bandwidth-style run: `window` puts then flush per iteration.
std::vector<BenchRow> run_bw(const LaunchOptions& opts, const BenchConfig& bench,
                             uint32_t window = 16);

std::vector<BenchRow> pingpong_rank_program(DevComm& comm, const BenchConfig& bench);
std::vector<BenchRow> bw_rank_program(DevComm& comm, const BenchConfig& bench, uint32_t window);

void write_csv(const std::string& path, const LaunchOptions& opts,
               const std::vector<BenchRow>& rows);

// --- MoE demos ---

enum class MoeMode { LowLatency, HighThroughput };

struct MoeConfig {
  uint32_t experts = 64;
  uint32_t tokens_per_rank = 32;
  uint32_t hidden = 7168;  // dispatch message = hidden*2 + 16 metadata bytes
  uint32_t top_k = 2;
  uint32_t channels = 24;  // HT: mapped over ceil(channels/4) comms via pool_select
  uint32_t slots = 4;      // HT circular buffer depth
  uint32_t messages = 64;  // HT messages per channel
  uint64_t seed = 1;
  MoeMode mode = MoeMode::LowLatency;

  uint64_t dispatch_message_bytes() const { return uint64_t{hidden} * 2 + 16; }
  uint64_t combine_message_bytes() const { return uint64_t{hidden} * 2; }
};

struct MoeReport {
  uint64_t dispatch_message_bytes = 0;
  uint64_t combine_message_bytes = 0;
  uint64_t tokens_routed = 0;
  FinalState state;
};

// Dispatch tokens to experts by a seeded routing table (puts + per-expert
// release SignalAdd), run the expert transform, combine weighted outputs back
// at the sources, and verify everything against a sequential recomputation.
// Integer payloads; exact comparison. Throws VerificationFailure.
MoeReport run_moe_ll(const LaunchOptions& opts, const MoeConfig& cfg);
void moe_ll_rank_program(DevComm& comm, const MoeConfig& cfg, RankState* out);

struct HtReport {
  uint64_t messages_delivered = 0;
  uint64_t channels = 0;
};

// Circular-buffer flow control per channel over a comm pool: data puts advance
// the remote tail signal, consumers advance the producer's head signal, slot
// generation stamps prove nothing unconsumed was overwritten. Throws
// FlowControlViolation / VerificationFailure.
HtReport run_moe_ht(const LaunchOptions& opts, const MoeConfig& cfg);
void moe_ht_rank_program(std::vector<DevComm*>& comms, const MoeConfig& cfg);

}  // namespace ginsim
