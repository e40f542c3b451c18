#include "doctest.h"

#include <random>
#include <set>

#include "ginsim/types.hpp"

using namespace ginsim;

namespace {

struct OwnedWindow {
  std::vector<std::byte> storage;
  Window window;

  OwnedWindow(WindowId id, RankId self, std::vector<uint64_t> sizes)
      : storage(sizes[self]), window(id, self, std::move(sizes), storage) {}
};

}  // namespace

TEST_CASE("world team translation is the identity") {
  Team world = Team::world(8);
  CHECK(team_translate(world, 5) == 5);
  CHECK(team_translate(world, 0) == 0);
  CHECK_THROWS_AS(team_translate(world, 8), RankOutOfRange);
}

TEST_CASE("subteam translation picks members") {
  Team t{1, {2, 4, 6}};
  CHECK(team_translate(t, 1) == 4);
  CHECK(team_translate(t, 2) == 6);
  CHECK_THROWS_AS(team_translate(t, 3), RankOutOfRange);
}

TEST_CASE("team translation is injective") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::set<RankId> pool;
    while (pool.size() < 1 + rng() % 16) pool.insert(static_cast<RankId>(rng() % 64));
    Team t{2, {pool.begin(), pool.end()}};
    std::shuffle(t.members.begin(), t.members.end(), rng);
    std::set<RankId> seen;
    for (uint32_t i = 0; i < t.size(); ++i) {
      CHECK(seen.insert(team_translate(t, i)).second);
    }
  }
}

TEST_CASE("window_resolve validates boundaries") {
  OwnedWindow w(0, 3, {64, 64, 64, 1024});
  CHECK(window_resolve(w.window, 3, 1000, 24).size() == 24);
  CHECK_THROWS_AS(window_resolve(w.window, 3, 1000, 25), OutOfBounds);
  // Offset-at-capacity with zero length is a valid empty range.
  CHECK(window_resolve(w.window, 3, 1024, 0).empty());
  // Overflowing offset+len must not wrap around.
  CHECK_THROWS_AS(window_resolve(w.window, 3, UINT64_MAX, 2), OutOfBounds);
}

TEST_CASE("asymmetric capacities are enforced per rank") {
  OwnedWindow w(1, 0, {4096, 1024});
  CHECK_THROWS_AS(window_resolve(w.window, 1, 2048, 8), OutOfBounds);
  CHECK(window_resolve(w.window, 0, 2048, 8).size() == 8);
  // Resolving a remote rank's region yields no local bytes.
  CHECK(window_resolve(w.window, 1, 0, 8).empty());
  CHECK_THROWS_AS(window_resolve(w.window, 2, 0, 1), RankOutOfRange);
}

TEST_CASE("window construction validates the local region") {
  std::vector<std::byte> buf(10);
  CHECK_THROWS_AS(Window(0, 0, {11}, buf), UnknownWindow);
  CHECK_THROWS_AS(Window(0, 2, {10, 10}, buf), UnknownWindow);
}

TEST_CASE("pending windows are unusable until completed") {
  std::vector<std::byte> buf(16);
  Window w = Window::pending(5, 0, buf);
  CHECK(!w.complete());
  CHECK(w.id() == 5);
  CHECK_THROWS_AS(w.check_range(0, 0, 1), UnknownWindow);
}

TEST_CASE("signal ops are additive and Inc is Add(1)") {
  CHECK(SignalOp::inc().amount() == 1);
  CHECK(SignalOp::add(7).amount() == 7);
  CHECK(SignalOp::inc() == SignalOp{SignalKind::Inc, 1});
}
