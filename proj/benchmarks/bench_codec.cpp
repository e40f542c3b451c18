#include <benchmark/benchmark.h>

#include <random>

#include "ginsim/descriptor.hpp"

using namespace ginsim;

static void BM_EncodeDescriptor(benchmark::State& state) {
  Descriptor d = make_put_descriptor(0, 3, 1, 4096, 2, 8192, 14352,
                                     CompletionAction::signal(7, SignalOp::add(1)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(encode_descriptor(d));
  }
}
BENCHMARK(BM_EncodeDescriptor);

static void BM_DecodeDescriptor(benchmark::State& state) {
  const EncodedDescriptor enc = encode_descriptor(
      make_put_descriptor(0, 3, 1, 4096, 2, 8192, 14352,
                          CompletionAction::signal(7, SignalOp::add(1))));
  for (auto _ : state) {
    benchmark::DoNotOptimize(decode_descriptor(enc));
  }
}
BENCHMARK(BM_DecodeDescriptor);


