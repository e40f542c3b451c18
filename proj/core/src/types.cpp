#include "ginsim/types.hpp"

#include <numeric>
#include <string>

namespace ginsim {

Team Team::world(uint32_t world_size) {
  Team t;
  t.id = 0;
  t.members.resize(world_size);
  std::iota(t.members.begin(), t.members.end(), RankId{0});
  return t;
}

RankId team_translate(const Team& team, uint32_t team_rank) {
  if (team_rank >= team.members.size()) {
    throw RankOutOfRange("team rank " + std::to_string(team_rank) + " out of range for team of " +
                         std::to_string(team.members.size()));
  }
  return team.members[team_rank];
}

Window::Window(WindowId id, RankId self_rank, std::vector<uint64_t> per_rank_size,
               std::span<std::byte> local_region)
    : id_(id), self_rank_(self_rank), per_rank_size_(std::move(per_rank_size)),
      local_(local_region) {
  if (self_rank_ >= per_rank_size_.size() || local_.size() != per_rank_size_[self_rank_]) {
    throw UnknownWindow("window " + std::to_string(id) + ": local region size mismatch");
  }
}

Window Window::pending(WindowId id, RankId self_rank, std::span<std::byte> local_region) {
  Window w;
  w.id_ = id;
  w.self_rank_ = self_rank;
  w.local_ = local_region;
  return w;
}

uint64_t Window::size_of(RankId rank) const {
  if (!complete()) {
    throw UnknownWindow("window " + std::to_string(id_) + " not fully registered yet");
  }
  if (rank >= per_rank_size_.size()) {
    throw RankOutOfRange("rank " + std::to_string(rank) + " not registered in window " +
                         std::to_string(id_));
  }
  return per_rank_size_[rank];
}

void Window::check_range(RankId rank, uint64_t offset, uint64_t len) const {
  const uint64_t cap = size_of(rank);
  // offset + len can wrap; compare without overflow.
  if (offset > cap || len > cap - offset) {
    throw OutOfBounds("window " + std::to_string(id_) + " rank " + std::to_string(rank) +
                      ": [" + std::to_string(offset) + ", +" + std::to_string(len) +
                      ") exceeds capacity " + std::to_string(cap));
  }
}

std::span<std::byte> Window::local_bytes(uint64_t offset, uint64_t len) {
  check_range(self_rank_, offset, len);
  return local_.subspan(static_cast<size_t>(offset), static_cast<size_t>(len));
}

std::span<const std::byte> Window::local_bytes(uint64_t offset, uint64_t len) const {
  check_range(self_rank_, offset, len);
  return local_.subspan(static_cast<size_t>(offset), static_cast<size_t>(len));
}

std::span<std::byte> window_resolve(Window& w, RankId rank, uint64_t offset, uint64_t len) {
  w.check_range(rank, offset, len);
  if (rank == w.self_rank()) return w.local_bytes(offset, len);
  return {};
}

}  // namespace ginsim
