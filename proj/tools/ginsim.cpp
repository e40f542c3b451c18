// ginsim — run the simulated GIN runtime: demos (ring, moe-ll, moe-ht) and
// microbenchmarks (pingpong, bw) over the in-process fabric or loopback
// sockets. Socket runs spawn one worker process per rank through the hidden
// `worker` subcommand.

#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ginsim/harness.hpp"
#include "ginsim/socket_transport.hpp"

using namespace ginsim;

namespace {

struct CliOptions {
  uint32_t ranks = 2;
  std::string backend = "";  // "", "direct", "proxy"
  std::string transport = "inproc";
  std::string sizes = "4:4194304";
  uint32_t iters = 100;
  uint32_t warmup = 10;
  uint64_t seed = 0x5EED;
  bool seed_set = false;
  std::string csv;
  bool wall = false;
  uint64_t latency_ns = 500;
  bool latency_set = false;
  uint64_t jitter_ns = 0;
  bool jitter_set = false;
  uint32_t reorder = 0;
  bool reorder_set = false;
  double line_rate = 16.0;

  // demo knobs
  uint64_t bytes = 4096;
  uint32_t rounds = 10;
  uint32_t experts = 64;
  uint32_t tokens = 32;
  uint32_t hidden = 7168;
  uint32_t topk = 2;
  uint32_t channels = 24;
  uint32_t slots = 4;
  uint32_t messages = 64;

  // worker plumbing
  std::string program;
  uint16_t port = 0;
  int32_t rank = -1;
};

void add_common_flags(CLI::App* cmd, CliOptions& o) {
  cmd->add_option("--ranks", o.ranks, "number of ranks");
  cmd->add_option("--backend", o.backend, "direct|proxy (default: GINSIM_BACKEND or direct)")
      ->check(CLI::IsMember({"direct", "proxy"}));
  cmd->add_option("--transport", o.transport, "inproc|socket")
      ->check(CLI::IsMember({"inproc", "socket"}));
  cmd->add_option("--seed", o.seed, "latency model seed")->trigger_on_parse(false);
  cmd->add_flag_callback("--wall", [&o] { o.wall = true; }, "report wall-clock time");
  cmd->add_option("--latency-ns", o.latency_ns, "base one-way delay");
  cmd->add_option("--jitter-ns", o.jitter_ns, "uniform extra delay");
  cmd->add_option("--reorder", o.reorder, "per-channel reorder window");
  cmd->add_option("--line-rate", o.line_rate, "virtual GB/s for the size-dependent term");
  cmd->add_option("--port", o.port, "socket rendezvous port (0 = pick)");
}

Config build_config(const CliOptions& o, CLI::App* cmd) {
  Config cfg = config_from_env();
  if (!o.backend.empty()) {
    cfg.backend = (o.backend == "proxy") ? BackendKind::Proxy : BackendKind::Direct;
  }
  if (cmd->count("--seed")) cfg.latency.seed = o.seed;
  if (cmd->count("--latency-ns")) cfg.latency.base_delay_ns = o.latency_ns;
  if (cmd->count("--jitter-ns")) cfg.latency.jitter_ns = o.jitter_ns;
  if (cmd->count("--reorder")) cfg.latency.reorder_window = o.reorder;
  if (cmd->count("--line-rate")) cfg.latency.line_rate_gbps = o.line_rate;
  return cfg;
}

std::vector<uint64_t> parse_sizes(const std::string& range) {
  const auto colon = range.find(':');
  if (colon == std::string::npos) {
    return {std::stoull(range)};
  }
  const uint64_t lo = std::stoull(range.substr(0, colon));
  const uint64_t hi = std::stoull(range.substr(colon + 1));
  if (lo == 0 || hi < lo) throw UsageError("bad --sizes range " + range);
  std::vector<uint64_t> sizes;
  for (uint64_t s = lo; s <= hi; s *= 2) sizes.push_back(s);
  return sizes;
}

LaunchOptions build_launch(const CliOptions& o, CLI::App* cmd) {
  LaunchOptions launch;
  launch.ranks = o.ranks;
  launch.transport = (o.transport == "socket") ? TransportKind::Socket : TransportKind::Inproc;
  launch.config = build_config(o, cmd);
  launch.port = o.port;
  return launch;
}

BenchConfig build_bench(const CliOptions& o) {
  BenchConfig bench;
  bench.sizes = parse_sizes(o.sizes);
  bench.iters = o.iters;
  bench.warmup = o.warmup;
  bench.wall_clock = o.wall;
  bench.csv_path = o.csv;
  return bench;
}

MoeConfig build_moe(const CliOptions& o, MoeMode mode, CLI::App* cmd) {
  MoeConfig moe;
  moe.experts = o.experts;
  moe.tokens_per_rank = o.tokens;
  moe.hidden = o.hidden;
  moe.top_k = o.topk;
  moe.channels = o.channels;
  moe.slots = o.slots;
  moe.messages = o.messages;
  moe.seed = cmd->count("--seed") ? o.seed : config_from_env().latency.seed;
  moe.mode = mode;
  return moe;
}

// Self-exec rank workers for socket runs: forwards all settings plus
// program/port; each child connects to the rendezvous and runs its rank.
void spawn_workers(const char* exe, const CliOptions& o, CLI::App* cmd,
                   const std::string& program) {
  const uint16_t port = o.port != 0 ? o.port : reserve_loopback_port();
  std::vector<std::string> args = {"worker", "--program", program,
                                   "--ranks", std::to_string(o.ranks),
                                   "--port", std::to_string(port)};
  auto fwd = [&](const std::string& flag, const std::string& value) {
    args.push_back(flag);
    args.push_back(value);
  };
  if (!o.backend.empty()) fwd("--backend", o.backend);
  if (cmd->count("--seed")) fwd("--seed", std::to_string(o.seed));
  if (cmd->count("--latency-ns")) fwd("--latency-ns", std::to_string(o.latency_ns));
  if (cmd->count("--jitter-ns")) fwd("--jitter-ns", std::to_string(o.jitter_ns));
  if (cmd->count("--reorder")) fwd("--reorder", std::to_string(o.reorder));
  if (cmd->count("--line-rate")) fwd("--line-rate", std::to_string(o.line_rate));
  if (o.wall) args.push_back("--wall");
  fwd("--sizes", o.sizes);
  fwd("--iters", std::to_string(o.iters));
  fwd("--warmup", std::to_string(o.warmup));
  if (!o.csv.empty()) fwd("--csv", o.csv);
  fwd("--bytes", std::to_string(o.bytes));
  fwd("--rounds", std::to_string(o.rounds));
  fwd("--experts", std::to_string(o.experts));
  fwd("--tokens", std::to_string(o.tokens));
  fwd("--hidden", std::to_string(o.hidden));
  fwd("--topk", std::to_string(o.topk));
  fwd("--channels", std::to_string(o.channels));
  fwd("--slots", std::to_string(o.slots));
  fwd("--messages", std::to_string(o.messages));

  launch_processes(exe, args, o.ranks);
}

int run_worker(const CliOptions& o, CLI::App* cmd) {
  if (o.rank < 0 || o.program.empty() || o.port == 0) {
    throw UsageError("worker needs --program, --port, and --rank");
  }
  Config cfg = build_config(o, cmd);
  const RankId rank = static_cast<RankId>(o.rank);

  if (o.program == "ring") {
    RingOptions ring{o.bytes, o.rounds};
    auto comm = comm_init_socket("127.0.0.1", o.port, o.ranks, rank, cfg);
    ring_rank_program(*comm, ring, nullptr);
    return 0;
  }
  if (o.program == "bench-pingpong" || o.program == "bench-bw") {
    BenchConfig bench = build_bench(o);
    auto comm = comm_init_socket("127.0.0.1", o.port, o.ranks, rank, cfg);
    auto rows = (o.program == "bench-pingpong")
                    ? pingpong_rank_program(*comm, bench)
                    : bw_rank_program(*comm, bench, 16);
    if (rank == 0) {
      LaunchOptions meta;
      meta.ranks = o.ranks;
      meta.transport = TransportKind::Socket;
      meta.config = cfg;
      if (!bench.csv_path.empty()) write_csv(bench.csv_path, meta, rows);
      for (const BenchRow& row : rows) {
        std::printf("%8llu B  p50 %8llu ns  p99 %8llu ns  mean %10.1f ns\n",
                    (unsigned long long)row.size_bytes, (unsigned long long)row.p50_ns,
                    (unsigned long long)row.p99_ns, row.mean_ns);
      }
    }
    return 0;
  }
  if (o.program == "moe-ll") {
    MoeConfig moe = build_moe(o, MoeMode::LowLatency, cmd);
    auto comm = comm_init_socket("127.0.0.1", o.port, o.ranks, rank, cfg);
    moe_ll_rank_program(*comm, moe, nullptr);
    return 0;
  }
  if (o.program == "moe-ht") {
    MoeConfig moe = build_moe(o, MoeMode::HighThroughput, cmd);
    const uint32_t n_comms = (moe.channels + cfg.n_contexts - 1) / cfg.n_contexts;
    std::vector<std::unique_ptr<DevComm>> owned;
    std::vector<DevComm*> comms;
    for (uint32_t c = 0; c < n_comms; ++c) {
      owned.push_back(comm_init_socket("127.0.0.1", static_cast<uint16_t>(o.port + c), o.ranks,
                                       rank, cfg));
      comms.push_back(owned.back().get());
    }
    moe_ht_rank_program(comms, moe);
    return 0;
  }
  throw UsageError("unknown worker program " + o.program);
}

void print_rows(const std::vector<BenchRow>& rows) {
  for (const BenchRow& row : rows) {
    std::printf("%8llu B  p50 %8llu ns  p99 %8llu ns  mean %10.1f ns\n",
                (unsigned long long)row.size_bytes, (unsigned long long)row.p50_ns,
                (unsigned long long)row.p99_ns, row.mean_ns);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ginsim: device-initiated one-sided communication on a simulated fabric"};
  app.require_subcommand(1);

  CliOptions o;

  auto* bench = app.add_subcommand("bench", "microbenchmarks");
  bench->require_subcommand(1);
  auto* pingpong = bench->add_subcommand("pingpong", "put+signal round-trip latency");
  auto* bw = bench->add_subcommand("bw", "windowed put bandwidth");
  for (CLI::App* cmd : {pingpong, bw}) {
    add_common_flags(cmd, o);
    cmd->add_option("--sizes", o.sizes, "bytes, min:max doubling ladder");
    cmd->add_option("--iters", o.iters, "measured iterations per size");
    cmd->add_option("--warmup", o.warmup, "warmup iterations per size");
    cmd->add_option("--csv", o.csv, "CSV output path");
  }

  auto* demo = app.add_subcommand("demo", "protocol demos with built-in verification");
  demo->require_subcommand(1);
  auto* ring = demo->add_subcommand("ring", "unidirectional ring exchange");
  ring->add_option("--bytes", o.bytes, "payload bytes per hop");
  ring->add_option("--rounds", o.rounds, "rounds");
  auto* moe_ll = demo->add_subcommand("moe-ll", "MoE low-latency dispatch/combine");
  auto* moe_ht = demo->add_subcommand("moe-ht", "MoE high-throughput flow control");
  for (CLI::App* cmd : {ring, moe_ll, moe_ht}) add_common_flags(cmd, o);
  for (CLI::App* cmd : {moe_ll, moe_ht}) {
    cmd->add_option("--experts", o.experts, "total experts (moe-ll)");
    cmd->add_option("--tokens", o.tokens, "tokens per rank (moe-ll)");
    cmd->add_option("--hidden", o.hidden, "hidden dimension (moe-ll)");
    cmd->add_option("--topk", o.topk, "experts per token (moe-ll)");
    cmd->add_option("--channels", o.channels, "channels (moe-ht)");
    cmd->add_option("--slots", o.slots, "ring slots per channel (moe-ht)");
    cmd->add_option("--messages", o.messages, "messages per channel (moe-ht)");
  }

  auto* worker = app.add_subcommand("worker", "socket rank worker (internal)");
  add_common_flags(worker, o);
  worker->add_option("--program", o.program, "program name");
  worker->add_option("--rank", o.rank, "rank id");
  worker->add_option("--sizes", o.sizes, "");
  worker->add_option("--iters", o.iters, "");
  worker->add_option("--warmup", o.warmup, "");
  worker->add_option("--csv", o.csv, "");
  worker->add_option("--bytes", o.bytes, "");
  worker->add_option("--rounds", o.rounds, "");
  worker->add_option("--experts", o.experts, "");
  worker->add_option("--tokens", o.tokens, "");
  worker->add_option("--hidden", o.hidden, "");
  worker->add_option("--topk", o.topk, "");
  worker->add_option("--channels", o.channels, "");
  worker->add_option("--slots", o.slots, "");
  worker->add_option("--messages", o.messages, "");

  CLI11_PARSE(app, argc, argv);

  try {
    if (worker->parsed()) return run_worker(o, worker);

    const bool socket = (o.transport == "socket");

    if (pingpong->parsed() || bw->parsed()) {
      CLI::App* cmd = pingpong->parsed() ? pingpong : bw;
      if (socket) {
        spawn_workers(argv[0], o, cmd, pingpong->parsed() ? "bench-pingpong" : "bench-bw");
        std::printf("ok: %s over sockets, %u ranks\n",
                    pingpong->parsed() ? "pingpong" : "bw", o.ranks);
        return 0;
      }
      BenchConfig cfg = build_bench(o);
      auto rows = pingpong->parsed() ? run_pingpong(build_launch(o, cmd), cfg)
                                     : run_bw(build_launch(o, cmd), cfg);
      print_rows(rows);
      return 0;
    }

    if (ring->parsed()) {
      if (socket) {
        spawn_workers(argv[0], o, ring, "ring");
      } else {
        run_ring(build_launch(o, ring), RingOptions{o.bytes, o.rounds});
      }
      std::printf("ok: ring %u ranks x %u rounds x %llu bytes verified\n", o.ranks, o.rounds,
                  (unsigned long long)o.bytes);
      return 0;
    }
    if (moe_ll->parsed()) {
      if (socket) {
        spawn_workers(argv[0], o, moe_ll, "moe-ll");
        std::printf("ok: moe-ll over sockets verified\n");
        return 0;
      }
      MoeConfig cfg = build_moe(o, MoeMode::LowLatency, moe_ll);
      MoeReport report = run_moe_ll(build_launch(o, moe_ll), cfg);
      std::printf("ok: moe-ll verified; dispatch %llu B, combine %llu B, %llu routed tokens\n",
                  (unsigned long long)report.dispatch_message_bytes,
                  (unsigned long long)report.combine_message_bytes,
                  (unsigned long long)report.tokens_routed);
      return 0;
    }
    if (moe_ht->parsed()) {
      if (socket) {
        spawn_workers(argv[0], o, moe_ht, "moe-ht");
        std::printf("ok: moe-ht over sockets verified\n");
        return 0;
      }
      MoeConfig cfg = build_moe(o, MoeMode::HighThroughput, moe_ht);
      HtReport report = run_moe_ht(build_launch(o, moe_ht), cfg);
      std::printf("ok: moe-ht verified; %llu messages over %llu channels\n",
                  (unsigned long long)report.messages_delivered,
                  (unsigned long long)report.channels);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
