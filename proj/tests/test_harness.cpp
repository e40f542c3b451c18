#include "doctest.h"

#include <cstdio>
#include <fstream>

#include "ginsim/harness.hpp"

using namespace ginsim;

namespace {

LaunchOptions inproc(uint32_t ranks, BackendKind kind, LatencyModel model = {
                                        .base_delay_ns = 50, .jitter_ns = 400,
                                        .reorder_window = 4, .seed = 5}) {
  LaunchOptions opts;
  opts.ranks = ranks;
  opts.config.backend = kind;
  opts.config.latency = model;
  return opts;
}

}  // namespace

TEST_CASE("ring demo verifies a two-rank exchange") {
  RingReport report = run_ring(inproc(2, BackendKind::Direct), RingOptions{256, 3});
  CHECK(report.ranks == 2);
  REQUIRE(report.state.size() == 2);
  CHECK(report.state[0].windows.size() == 2);
}

TEST_CASE("ring demo rejects a single rank") {
  CHECK_THROWS_AS(run_ring(inproc(1, BackendKind::Direct), RingOptions{64, 1}), UsageError);
}

TEST_CASE("ring runs many rounds with reordering on, both backends") {
  for (BackendKind kind : {BackendKind::Direct, BackendKind::Proxy}) {
    CAPTURE(to_string(kind));
    CHECK_NOTHROW(run_ring(inproc(4, kind), RingOptions{512, 25}));
  }
}

TEST_CASE("pingpong reports virtual-time rows and is deterministic") {
  BenchConfig bench;
  bench.sizes = {4, 64, 1024};
  bench.iters = 8;
  bench.warmup = 2;
  LatencyModel model{.base_delay_ns = 400, .jitter_ns = 0, .reorder_window = 0, .seed = 7,
                     .line_rate_gbps = 8.0};

  auto rows_a = run_pingpong(inproc(2, BackendKind::Direct, model), bench);
  auto rows_b = run_pingpong(inproc(2, BackendKind::Direct, model), bench);
  REQUIRE(rows_a.size() == 3);
  for (size_t i = 0; i < rows_a.size(); ++i) {
    CHECK(rows_a[i].p50_ns == rows_b[i].p50_ns);  // same seed, same virtual schedule
    CHECK(rows_a[i].iters == 8);
  }
  // Round trips cover two one-way base delays at minimum.
  CHECK(rows_a[0].p50_ns >= 2 * 400);
  // Size term makes medians grow with message size.
  CHECK(rows_a[0].p50_ns <= rows_a[1].p50_ns);
  CHECK(rows_a[1].p50_ns <= rows_a[2].p50_ns);
}

TEST_CASE("pingpong needs exactly two ranks") {
  BenchConfig bench;
  bench.sizes = {4};
  bench.iters = 1;
  bench.warmup = 0;
  CHECK_THROWS_AS(run_pingpong(inproc(3, BackendKind::Direct), bench), UsageError);
}

TEST_CASE("csv output carries the pinned schema") {
  BenchConfig bench;
  bench.sizes = {4, 8};
  bench.iters = 4;
  bench.warmup = 1;
  bench.csv_path = "pingpong_test.csv";
  auto opts = inproc(2, BackendKind::Proxy);
  run_pingpong(opts, bench);

  std::ifstream in(bench.csv_path);
  REQUIRE(in.good());
  std::string header;
  std::getline(in, header);
  CHECK(header == "size_bytes,iters,p50_ns,p99_ns,mean_ns,backend,transport,seed");
  std::string row;
  std::getline(in, row);
  CHECK(row.find(",proxy,inproc,") != std::string::npos);
  size_t rows = 1;
  while (std::getline(in, row)) {
    if (!row.empty()) ++rows;
  }
  CHECK(rows == 2);
  std::remove(bench.csv_path.c_str());
}

TEST_CASE("bw bench runs and reports rows") {
  BenchConfig bench;
  bench.sizes = {16, 256};
  bench.iters = 4;
  bench.warmup = 1;
  auto rows = run_bw(inproc(2, BackendKind::Direct), bench, 4);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].iters == 4);
}

TEST_CASE("moe-ll minimal routing: one token, two ranks") {
  MoeConfig cfg;
  cfg.experts = 4;
  cfg.tokens_per_rank = 1;
  cfg.hidden = 32;
  cfg.top_k = 1;
  cfg.seed = 3;
  MoeReport report = run_moe_ll(inproc(2, BackendKind::Direct), cfg);
  CHECK(report.dispatch_message_bytes == 32 * 2 + 16);
  CHECK(report.combine_message_bytes == 32 * 2);
  CHECK(report.tokens_routed == 2);
}

TEST_CASE("moe-ll full-width hidden dimension verifies against the oracle") {
  MoeConfig cfg;
  cfg.experts = 16;
  cfg.tokens_per_rank = 4;
  cfg.hidden = 7168;
  cfg.top_k = 2;
  cfg.seed = 11;
  MoeReport report = run_moe_ll(inproc(4, BackendKind::Proxy), cfg);
  CHECK(report.dispatch_message_bytes == 14352);
  CHECK(report.combine_message_bytes == 14336);
}

TEST_CASE("moe-ll validates its configuration") {
  MoeConfig cfg;
  cfg.experts = 7;  // not divisible by ranks
  CHECK_THROWS_AS(run_moe_ll(inproc(2, BackendKind::Direct), cfg), UsageError);
  cfg.experts = 8;
  cfg.mode = MoeMode::HighThroughput;
  CHECK_THROWS_AS(run_moe_ll(inproc(2, BackendKind::Direct), cfg), UsageError);
}

TEST_CASE("moe-ll final states are identical across backends") {
  MoeConfig cfg;
  cfg.experts = 8;
  cfg.tokens_per_rank = 3;
  cfg.hidden = 64;
  cfg.top_k = 2;
  cfg.seed = 21;
  auto direct = run_moe_ll(inproc(2, BackendKind::Direct), cfg);
  auto proxy = run_moe_ll(inproc(2, BackendKind::Proxy), cfg);
  CHECK(direct.state == proxy.state);
}

TEST_CASE("moe-ht flow control delivers every message in order") {
  MoeConfig cfg;
  cfg.mode = MoeMode::HighThroughput;
  cfg.channels = 6;
  cfg.slots = 4;
  cfg.messages = 16;
  cfg.seed = 9;
  HtReport report = run_moe_ht(inproc(2, BackendKind::Direct), cfg);
  CHECK(report.channels == 6);
  CHECK(report.messages_delivered == 6ull * 16 * 2);
}

TEST_CASE("moe-ht exercises a single-slot buffer") {
  MoeConfig cfg;
  cfg.mode = MoeMode::HighThroughput;
  cfg.channels = 2;
  cfg.slots = 1;  // strictest flow control: every slot reused immediately
  cfg.messages = 8;
  CHECK_NOTHROW(run_moe_ht(inproc(2, BackendKind::Proxy), cfg));
}

TEST_CASE("moe demos verify identically over the socket transport") {
  LaunchOptions opts;
  opts.ranks = 2;
  opts.transport = TransportKind::Socket;
  opts.config.backend = BackendKind::Proxy;
  opts.config.latency = {};

  MoeConfig ll;
  ll.experts = 4;
  ll.tokens_per_rank = 2;
  ll.hidden = 64;
  ll.top_k = 2;
  ll.seed = 5;
  CHECK_NOTHROW(run_moe_ll(opts, ll));

  MoeConfig ht;
  ht.mode = MoeMode::HighThroughput;
  ht.channels = 5;  // spans two comms (two rendezvous ports)
  ht.slots = 2;
  ht.messages = 6;
  CHECK_NOTHROW(run_moe_ht(opts, ht));
}
