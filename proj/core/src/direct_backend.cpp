#include "ginsim/direct_backend.hpp"

#include <string>

namespace ginsim {

DirectContext::DirectContext(FabricPlugin& plugin, ContextId index)
    : plugin_(plugin), index_(index) {}

RankId DirectContext::rank() const { return plugin_.transport_.rank(); }

void DirectContext::post(const ResolvedOp& op) {
  PutSource src = (op.opcode == Opcode::Put)
                      ? PutSource::window(MrHandle{op.src_window}, op.src_offset_or_value)
                      : PutSource::inline_bytes(op.src_offset_or_value);
  std::optional<std::pair<SignalId, SignalOp>> sig;
  if (op.action.remote_signal) {
    sig = std::make_pair(op.action.remote_signal->id, op.action.remote_signal->op);
  }
  plugin_.record_call(sig ? 's' : 'p', index_, op.peer, op.bytes);

  // Holding mu_ across post+insert keeps poll() from matching this op's ack
  // before the entry exists.
  std::lock_guard lock(mu_);
  const uint64_t seq = plugin_.post(src, op.dst_window, op.dst_offset, op.bytes, op.peer, index_, sig);
  in_flight_.emplace(std::make_pair(op.peer, seq), op.action);
}

void DirectContext::note_ack(const ChannelKey& channel, uint64_t seq) {
  std::lock_guard lock(inbox_mu_);
  ack_inbox_.emplace_back(channel.dst, seq);
}

size_t DirectContext::poll() {
  std::vector<std::pair<RankId, uint64_t>> acks;
  {
    std::lock_guard lock(inbox_mu_);
    acks.swap(ack_inbox_);
  }
  if (acks.empty()) return 0;

  std::lock_guard lock(mu_);
  for (const auto& [peer, seq] : acks) {
    auto it = in_flight_.find({peer, seq});
    if (it == in_flight_.end()) {
      throw Error("ack for seq " + std::to_string(seq) + " with no outstanding direct op");
    }
    if (it->second.local_counter) plugin_.bump_counter_(*it->second.local_counter);
    in_flight_.erase(it);
  }
  return acks.size();
}

uint64_t DirectContext::outstanding() const {
  std::lock_guard lock(mu_);
  return in_flight_.size();
}

}  // namespace ginsim
