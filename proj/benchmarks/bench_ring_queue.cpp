#include <benchmark/benchmark.h>

#include <thread>

#include "ginsim/proxy_backend.hpp"

using namespace ginsim;

static void BM_RingSubmitPop(benchmark::State& state) {
  DescriptorRing ring(1024);
  const EncodedDescriptor d =
      encode_descriptor(make_put_descriptor(0, 1, 0, 0, 1, 0, 64, {}));
  EncodedDescriptor out;
  for (auto _ : state) {
    ring.submit(d);
    benchmark::DoNotOptimize(ring.pop(out));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_RingSubmitPop);

static void BM_RingContendedSubmit(benchmark::State& state) {
  // One background producer contending for tickets while the timed thread
  // submits and the consumer drains inline.
  DescriptorRing ring(1024);
  const EncodedDescriptor d =
      encode_descriptor(make_put_descriptor(0, 1, 0, 0, 1, 0, 64, {}));
  std::atomic<bool> stop{false};
  std::thread other([&] {
    EncodedDescriptor mine = d;
    while (!stop.load(std::memory_order_acquire)) {
      ring.submit(mine);
      EncodedDescriptor out;
      ring.pop(out);
    }
  });
  EncodedDescriptor out;
  for (auto _ : state) {
    ring.submit(d);
    while (!ring.pop(out)) {
    }
  }
  stop.store(true, std::memory_order_release);
  other.join();
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_RingContendedSubmit);


