#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ginsim/errors.hpp"

namespace ginsim {

// Integer identifiers. Ranks are world-scoped unless a call says team-relative.
using RankId = uint32_t;
using TeamId = uint16_t;
using WindowId = uint32_t;
using SignalId = uint32_t;
using CounterId = uint32_t;
using ContextId = uint16_t;

// srcWindow value marking an inline payload carried in the descriptor itself.
inline constexpr WindowId kInlineWindow = 0xFFFFFFFFu;

// Inline values ride in a single 64-bit descriptor field.
inline constexpr uint64_t kMaxInlineBytes = 8;

enum class SignalKind : uint8_t { Inc = 0, Add = 1 };

// Signals only ever grow; Inc is Add with operand 1.
struct SignalOp {
  SignalKind kind = SignalKind::Inc;
  uint64_t operand = 1;

  static SignalOp inc() { return {SignalKind::Inc, 1}; }
  static SignalOp add(uint64_t v) { return {SignalKind::Add, v}; }

  uint64_t amount() const { return kind == SignalKind::Inc ? 1 : operand; }

  friend bool operator==(const SignalOp&, const SignalOp&) = default;
};

// What to do when an operation completes: bump a signal cell on the target
// rank (remote completion) and/or a counter cell on the initiator (local
// completion). Both optional, both independent.
struct CompletionAction {
  struct RemoteSignal {
    SignalId id = 0;
    SignalOp op = SignalOp::inc();
    friend bool operator==(const RemoteSignal&, const RemoteSignal&) = default;
  };
  std::optional<RemoteSignal> remote_signal;
  std::optional<CounterId> local_counter;

  static CompletionAction none() { return {}; }
  static CompletionAction signal(SignalId id, SignalOp op = SignalOp::inc()) {
    CompletionAction a;
    a.remote_signal = RemoteSignal{id, op};
    return a;
  }
  static CompletionAction counter(CounterId id) {
    CompletionAction a;
    a.local_counter = id;
    return a;
  }
  CompletionAction with_counter(CounterId id) const {
    CompletionAction a = *this;
    a.local_counter = id;
    return a;
  }

  friend bool operator==(const CompletionAction&, const CompletionAction&) = default;
};

// An ordered subset of world ranks. Team-relative rank i maps to members[i].
struct Team {
  TeamId id = 0;
  std::vector<RankId> members;

  static Team world(uint32_t world_size);
  uint32_t size() const { return static_cast<uint32_t>(members.size()); }
};

// Returns the world rank for a team-relative rank.
RankId team_translate(const Team& team, uint32_t team_rank);

// A collectively registered memory region. Every rank of the communicator has
// an entry in per_rank_size (capacities may differ); the local region backs
// this rank's slice and is owned by the caller who registered it.
class Window {
 public:
  Window() = default;
  Window(WindowId id, RankId self_rank, std::vector<uint64_t> per_rank_size,
         std::span<std::byte> local_region);

  // A registration that is still collecting peers' sizes; unusable until the
  // runtime fills it in.
  static Window pending(WindowId id, RankId self_rank, std::span<std::byte> local_region);

  WindowId id() const { return id_; }
  RankId self_rank() const { return self_rank_; }
  bool complete() const { return !per_rank_size_.empty(); }
  uint32_t rank_count() const { return static_cast<uint32_t>(per_rank_size_.size()); }

  uint64_t size_of(RankId rank) const;

  // Validates [offset, offset+len) against rank's capacity.
  void check_range(RankId rank, uint64_t offset, uint64_t len) const;

  // Validated view of the local slice.
  std::span<std::byte> local_bytes(uint64_t offset, uint64_t len);
  std::span<const std::byte> local_bytes(uint64_t offset, uint64_t len) const;

 private:
  WindowId id_ = 0;
  RankId self_rank_ = 0;
  std::vector<uint64_t> per_rank_size_;
  std::span<std::byte> local_;
};

// Validates [offset, offset+len) within rank's region of w and returns the
// backing bytes when rank is the registering rank (other ranks' regions live
// in their own address space; the returned span is empty for those).
std::span<std::byte> window_resolve(Window& w, RankId rank, uint64_t offset, uint64_t len);

}  // namespace ginsim
