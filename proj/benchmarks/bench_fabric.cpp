#include <benchmark/benchmark.h>

#include <map>

#include "ginsim/fabric.hpp"

using namespace ginsim;

namespace {

struct NullSink : DeliverySink {
  std::vector<std::byte> window = std::vector<std::byte>(1 << 22);
  std::span<std::byte> sink_window_bytes(WindowId, uint64_t off, uint64_t len) override {
    return std::span<std::byte>(window).subspan(off, len);
  }
  void sink_apply_signal(SignalId, const SignalOp&) override {}
  void sink_on_ack(const ChannelKey&, uint64_t) override {}
};

}  // namespace

static void BM_FabricPutDeliver(benchmark::State& state) {
  const size_t bytes = static_cast<size_t>(state.range(0));
  SimFabric fabric({.base_delay_ns = 100});
  NullSink s0, s1;
  SimEndpoint& ep0 = fabric.open_endpoint(0, {0, 1}, s0);
  SimEndpoint& ep1 = fabric.open_endpoint(1, {0, 1}, s1);
  std::vector<std::byte> payload(bytes);
  const ChannelKey ch{0, 0, 1};
  for (auto _ : state) {
    ep0.tx_put(ch, 0, 0, payload);
    while (ep1.rx_progress() + ep0.rx_progress() == 0) fabric.try_advance();
    // drain the ack
    while (ep0.rx_progress() == 0) fabric.try_advance();
  }
  state.SetBytesProcessed(int64_t(state.iterations()) * int64_t(bytes));
}
BENCHMARK(BM_FabricPutDeliver)->Arg(64)->Arg(4096)->Arg(65536)->Arg(1 << 20);

static void BM_FabricSignalWatermark(benchmark::State& state) {
  SimFabric fabric({});
  NullSink s0, s1;
  SimEndpoint& ep0 = fabric.open_endpoint(0, {0, 1}, s0);
  SimEndpoint& ep1 = fabric.open_endpoint(1, {0, 1}, s1);
  const ChannelKey ch{0, 0, 1};
  for (auto _ : state) {
    ep0.tx_signal(ch, 0, SignalOp::add(1));
    while (ep1.rx_progress() == 0) fabric.try_advance();
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_FabricSignalWatermark);


BENCHMARK_MAIN();
