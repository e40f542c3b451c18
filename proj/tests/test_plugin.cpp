#include "doctest.h"

#include <map>

#include "ginsim/direct_backend.hpp"
#include "ginsim/fabric.hpp"
#include "ginsim/plugin.hpp"

using namespace ginsim;

namespace {

// One rank's half of a plugin test rig: window storage, cells, and routing of
// delivered acks into the plugin.
struct Node : DeliverySink, WindowTable {
  RankId self;
  std::map<WindowId, std::vector<std::byte>> storage;
  std::map<WindowId, Window> wins;
  std::map<SignalId, uint64_t> signals;
  std::vector<uint64_t> counters = std::vector<uint64_t>(16, 0);
  SimEndpoint* ep = nullptr;
  std::unique_ptr<FabricPlugin> plugin;

  explicit Node(RankId r) : self(r) {}

  void make_window(WindowId id, std::vector<uint64_t> sizes) {
    storage[id] = std::vector<std::byte>(sizes[self]);
    wins.emplace(id, Window(id, self, std::move(sizes), storage[id]));
  }

  Window& lookup_window(WindowId id) override {
    auto it = wins.find(id);
    if (it == wins.end()) throw UnknownWindow("window " + std::to_string(id));
    return it->second;
  }
  std::span<std::byte> sink_window_bytes(WindowId w, uint64_t off, uint64_t len) override {
    return lookup_window(w).local_bytes(off, len);
  }
  void sink_apply_signal(SignalId id, const SignalOp& op) override {
    signals[id] += op.amount();
  }
  void sink_on_ack(const ChannelKey& ch, uint64_t seq) override { plugin->on_ack(ch, seq); }
};

struct Rig {
  SimFabric fabric;
  Node n0{0}, n1{1};

  explicit Rig(BackendKind semantics, LatencyModel model = {.base_delay_ns = 100}) : fabric(model) {
    n0.ep = &fabric.open_endpoint(0, {0, 1}, n0);
    n1.ep = &fabric.open_endpoint(1, {0, 1}, n1);
    for (Node* n : {&n0, &n1}) {
      n->plugin = std::make_unique<FabricPlugin>(
          semantics, *n->ep, *n, 4, [n](CounterId c) { n->counters[c]++; });
    }
  }

  void drain() {
    for (;;) {
      size_t moved = n0.ep->rx_progress() + n1.ep->rx_progress();
      if (moved == 0 && !fabric.try_advance()) break;
    }
  }
};

std::vector<std::byte> pattern(size_t n, uint8_t tag) {
  std::vector<std::byte> v(n);
  for (size_t i = 0; i < n; ++i) v[i] = static_cast<std::byte>(tag ^ (i & 0xFF));
  return v;
}

}  // namespace

TEST_CASE("reg_mr requires a known window and is idempotent") {
  Rig rig(BackendKind::Proxy);
  CHECK_THROWS_AS(rig.n0.plugin->reg_mr(0), UnknownWindow);
  rig.n0.make_window(0, {1024, 1024});
  MrHandle a = rig.n0.plugin->reg_mr(0);
  MrHandle b = rig.n0.plugin->reg_mr(0);
  CHECK(a == b);
  CHECK(rig.n0.plugin->is_registered(0));
}

TEST_CASE("iput delivers bytes and completes via test/retire") {
  Rig rig(BackendKind::Proxy);
  rig.n0.make_window(0, {16384, 16384});
  rig.n1.make_window(0, {16384, 16384});
  MrHandle mr = rig.n0.plugin->reg_mr(0);

  // LL combine payload size.
  auto payload = pattern(14336, 0x5A);
  std::copy(payload.begin(), payload.end(), rig.n0.storage[0].begin());

  RequestId req = rig.n0.plugin->iput(PutSource::window(mr, 0), mr, 64, 14336, 1, 0,
                                      CompletionAction::counter(3));
  CHECK(!rig.n0.plugin->test(req));  // nonzero latency: nothing acked yet
  rig.drain();
  CHECK(rig.n0.plugin->test(req));
  CHECK(std::equal(payload.begin(), payload.end(), rig.n1.storage[0].begin() + 64));

  CompletionAction action = rig.n0.plugin->retire(req);
  CHECK(action.local_counter == CounterId{3});
  CHECK_THROWS_AS(rig.n0.plugin->test(req), UnknownHandle);
  CHECK_THROWS_AS(rig.n0.plugin->retire(req), UnknownHandle);
}

TEST_CASE("iput validates windows and bounds") {
  Rig rig(BackendKind::Proxy);
  rig.n0.make_window(0, {4096, 1024});  // asymmetric capacities
  rig.n1.make_window(0, {4096, 1024});
  MrHandle mr = rig.n0.plugin->reg_mr(0);

  SUBCASE("unregistered window") {
    CHECK_THROWS_AS(
        rig.n0.plugin->iput(PutSource::window(MrHandle{7}, 0), mr, 0, 8, 1, 0, {}),
        UnknownWindow);
  }
  SUBCASE("destination beyond the peer's asymmetric capacity") {
    CHECK_THROWS_AS(rig.n0.plugin->iput(PutSource::window(mr, 0), mr, 2048, 8, 1, 0, {}),
                    OutOfBounds);
    // The same offset toward rank 0 would be fine; capacity is per rank.
    rig.n1.plugin->reg_mr(0);
    CHECK_NOTHROW(rig.n1.plugin->iput(PutSource::window(MrHandle{0}, 0), MrHandle{0}, 2048, 8, 0,
                                      0, {}));
  }
  SUBCASE("zero-byte put is valid and consumes a sequence number") {
    RequestId req = rig.n0.plugin->iput(PutSource::window(mr, 0), mr, 0, 0, 1, 0, {});
    rig.drain();
    CHECK(rig.n0.plugin->test(req));
  }
}

TEST_CASE("iput_signal orders the signal after the data") {
  Rig rig(BackendKind::Proxy, {.base_delay_ns = 20, .jitter_ns = 500, .reorder_window = 4,
                               .seed = 17});
  rig.n0.make_window(0, {8192, 8192});
  rig.n1.make_window(0, {8192, 8192});
  MrHandle mr = rig.n0.plugin->reg_mr(0);

  auto a = pattern(256, 0x11);
  auto b = pattern(256, 0x22);
  std::copy(a.begin(), a.end(), rig.n0.storage[0].begin());
  std::copy(b.begin(), b.end(), rig.n0.storage[0].begin() + 256);

  rig.n0.plugin->iput(PutSource::window(mr, 0), mr, 0, 256, 1, 0, {});
  rig.n0.plugin->iput(PutSource::window(mr, 256), mr, 256, 256, 1, 0, {});
  rig.n0.plugin->iput_signal(PutSource::window(mr, 0), mr, 512, 0, 1, 0, 5, SignalOp::inc(), {});
  rig.drain();

  // When the signal applied, both puts were already visible (watermark rule);
  // by drain time everything is in place.
  CHECK(rig.n1.signals[5] == 1);
  CHECK(std::equal(a.begin(), a.end(), rig.n1.storage[0].begin()));
  CHECK(std::equal(b.begin(), b.end(), rig.n1.storage[0].begin() + 256));
}

TEST_CASE("zero-byte iput_signal adds exactly its operand") {
  Rig rig(BackendKind::Proxy);
  rig.n0.make_window(0, {64, 64});
  rig.n1.make_window(0, {64, 64});
  MrHandle mr = rig.n0.plugin->reg_mr(0);
  rig.n0.plugin->iput_signal(PutSource::window(mr, 0), mr, 0, 0, 1, 0, 2, SignalOp::add(42), {});
  rig.drain();
  CHECK(rig.n1.signals[2] == 42);
}

TEST_CASE("a thousand requests complete exactly once") {
  Rig rig(BackendKind::Proxy, {.base_delay_ns = 10, .jitter_ns = 200, .reorder_window = 2,
                               .seed = 23});
  rig.n0.make_window(0, {8192, 8192});
  rig.n1.make_window(0, {8192, 8192});
  MrHandle mr = rig.n0.plugin->reg_mr(0);

  std::vector<RequestId> reqs;
  for (int i = 0; i < 1000; ++i) {
    reqs.push_back(rig.n0.plugin->iput(PutSource::window(mr, (i % 64) * 8), mr, (i % 64) * 8, 8,
                                       1, i % 4, {}));
  }
  rig.drain();
  size_t completed = 0;
  for (RequestId r : reqs) {
    if (rig.n0.plugin->test(r)) {
      rig.n0.plugin->retire(r);
      ++completed;
    }
  }
  CHECK(completed == 1000);
  CHECK(rig.n0.plugin->outstanding_requests() == 0);
}

TEST_CASE("inline sources carry the value bytes") {
  Rig rig(BackendKind::Proxy);
  rig.n0.make_window(0, {64, 64});
  rig.n1.make_window(0, {64, 64});
  MrHandle mr = rig.n0.plugin->reg_mr(0);
  rig.n0.plugin->iput(PutSource::inline_bytes(0xDEADBEEF), mr, 0, 4, 1, 0, {});
  rig.drain();
  const auto& dst = rig.n1.storage[0];
  CHECK(std::to_integer<uint8_t>(dst[0]) == 0xEF);
  CHECK(std::to_integer<uint8_t>(dst[1]) == 0xBE);
  CHECK(std::to_integer<uint8_t>(dst[2]) == 0xAD);
  CHECK(std::to_integer<uint8_t>(dst[3]) == 0xDE);
}

TEST_CASE("semantics are enforced at the boundary") {
  Rig proxy(BackendKind::Proxy);
  proxy.n0.make_window(0, {64, 64});
  CHECK_THROWS_AS(proxy.n0.plugin->create_context(0), BackendMismatch);

  Rig direct(BackendKind::Direct);
  direct.n0.make_window(0, {64, 64});
  MrHandle mr = direct.n0.plugin->reg_mr(0);
  CHECK_THROWS_AS(direct.n0.plugin->iput(PutSource::window(mr, 0), mr, 0, 8, 1, 0, {}),
                  BackendMismatch);
  CHECK_NOTHROW(direct.n0.plugin->create_context(0));
  CHECK_NOTHROW(direct.n0.plugin->create_context(3));
  CHECK_THROWS_AS(direct.n0.plugin->create_context(4), InvalidContext);
}
