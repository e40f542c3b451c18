#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <vector>

#include "ginsim/descriptor.hpp"
#include "ginsim/plugin.hpp"

namespace ginsim {

// A descriptor with team translation already applied; what a submitter hands
// to the direct path (and what the proxy agent reconstructs when draining the
// ring).
struct ResolvedOp {
  Opcode opcode = Opcode::Put;
  RankId peer = 0;  // world rank
  WindowId dst_window = 0;
  uint64_t dst_offset = 0;
  WindowId src_window = kInlineWindow;
  uint64_t src_offset_or_value = 0;
  uint64_t bytes = 0;
  CompletionAction action;
};

// Inline-posting path: the submitting agent builds the work entry and posts
// straight to the transport in its own execution context. No descriptor ring,
// no intermediary agent; completion actions are keyed by the put's fabric seq.
class DirectContext {
 public:
  DirectContext(FabricPlugin& plugin, ContextId index);

  DirectContext(const DirectContext&) = delete;
  DirectContext& operator=(const DirectContext&) = delete;

  ContextId index() const { return index_; }
  RankId rank() const;

  // Validates, snapshots source bytes, and issues tx_put / tx_signal
  // immediately. Callable from any number of agents.
  void post(const ResolvedOp& op);

  // Consumes acks delivered by the endpoint's progress: applies CounterInc
  // actions and retires outstanding entries, each exactly once.
  size_t poll();

  uint64_t outstanding() const;

  // Ack intake from the transport (via FabricPlugin::on_ack).
  void note_ack(const ChannelKey& channel, uint64_t seq);

 private:
  FabricPlugin& plugin_;
  ContextId index_;

  mutable std::mutex mu_;
  std::map<std::pair<RankId, uint64_t>, CompletionAction> in_flight_;  // (peer, seq)

  std::mutex inbox_mu_;
  std::vector<std::pair<RankId, uint64_t>> ack_inbox_;
};

}  // namespace ginsim
