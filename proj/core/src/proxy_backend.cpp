#include "ginsim/proxy_backend.hpp"

#include <string>
#include <thread>

namespace ginsim {

DescriptorRing::DescriptorRing(size_t capacity) {
  if (capacity == 0 || (capacity & (capacity - 1)) != 0) {
    throw Error("ring capacity must be a power of two, got " + std::to_string(capacity));
  }
  mask_ = capacity - 1;
  slots_ = std::make_unique<Slot[]>(capacity);
  for (size_t i = 0; i < capacity; ++i) {
    slots_[i].seq.store(i, std::memory_order_relaxed);
  }
}

void DescriptorRing::submit(const EncodedDescriptor& d) {
  const uint64_t ticket = head_.fetch_add(1, std::memory_order_relaxed);
  Slot& slot = slots_[ticket & mask_];
  // Backpressure: a full ring spins (yielding) until the consumer frees the
  // slot. Submitters have no failure path for queue-full.
  while (slot.seq.load(std::memory_order_acquire) != ticket) {
    std::this_thread::yield();
  }
  slot.bytes = d;
  slot.seq.store(ticket + 1, std::memory_order_release);
}

bool DescriptorRing::pop(EncodedDescriptor& out) {
  const uint64_t t = tail_.load(std::memory_order_relaxed);
  Slot& slot = slots_[t & mask_];
  if (slot.seq.load(std::memory_order_acquire) != t + 1) return false;
  out = slot.bytes;
  slot.seq.store(t + capacity(), std::memory_order_release);
  tail_.store(t + 1, std::memory_order_release);
  return true;
}

ProxyBackend::ProxyBackend(FabricPlugin& plugin, uint32_t n_contexts, size_t ring_capacity,
                           Hooks hooks, size_t batch)
    : plugin_(plugin), hooks_(std::move(hooks)), batch_(batch) {
  rings_.reserve(n_contexts);
  ctx_.reserve(n_contexts);
  for (uint32_t i = 0; i < n_contexts; ++i) {
    rings_.push_back(std::make_unique<DescriptorRing>(ring_capacity));
    ctx_.push_back(std::make_unique<CtxState>());
  }
}

ContextId ProxyBackend::check_ctx(ContextId ctx) const {
  if (ctx >= rings_.size()) {
    throw InvalidContext("context " + std::to_string(ctx) + " out of range (" +
                         std::to_string(rings_.size()) + " configured)");
  }
  return ctx;
}

void ProxyBackend::submit(ContextId ctx, const Descriptor& d) {
  rings_[check_ctx(ctx)]->submit(encode_descriptor(d));
}

size_t ProxyBackend::progress_once() {
  size_t work = 0;

  for (uint32_t c = 0; c < rings_.size(); ++c) {
    EncodedDescriptor enc;
    for (size_t i = 0; i < batch_ && rings_[c]->pop(enc); ++i) {
      // A malformed descriptor here is a protocol bug; let it abort the run.
      const Descriptor d = decode_descriptor(enc);
      const RankId peer = hooks_.resolve_peer(d.team, d.peer);
      CompletionAction counter_only;
      if (d.has_counter()) counter_only.local_counter = d.counter_id;
      const PutSource src =
          d.opcode == Opcode::Put
              ? PutSource::window(MrHandle{d.src_window}, d.src_offset_or_value)
              : PutSource::inline_bytes(d.src_offset_or_value);

      RequestId id;
      if (d.has_signal()) {
        id = plugin_.iput_signal(src, MrHandle{d.dst_window}, d.dst_offset, d.bytes, peer,
                                 static_cast<ContextId>(c), d.signal_id, d.signal_op(),
                                 counter_only);
      } else {
        id = plugin_.iput(src, MrHandle{d.dst_window}, d.dst_offset, d.bytes, peer,
                          static_cast<ContextId>(c), counter_only);
      }
      ctx_[c]->in_flight.push_back(id);
      ctx_[c]->outstanding.fetch_add(1, std::memory_order_release);
      ++work;
    }
  }

  // Completion matching: retire acked requests and bump their counters.
  for (uint32_t c = 0; c < rings_.size(); ++c) {
    auto& in_flight = ctx_[c]->in_flight;
    size_t kept = 0;
    for (size_t i = 0; i < in_flight.size(); ++i) {
      if (plugin_.test(in_flight[i])) {
        const CompletionAction action = plugin_.retire(in_flight[i]);
        if (action.local_counter) hooks_.bump_counter(*action.local_counter);
        ctx_[c]->outstanding.fetch_sub(1, std::memory_order_release);
        ++work;
      } else {
        in_flight[kept++] = in_flight[i];
      }
    }
    in_flight.resize(kept);
  }

  return work;
}

uint64_t ProxyBackend::flush_snapshot(ContextId ctx) const {
  return rings_[check_ctx(ctx)]->submitted();
}

bool ProxyBackend::flush_satisfied(ContextId ctx, uint64_t snapshot) const {
  check_ctx(ctx);
  return rings_[ctx]->consumed() >= snapshot &&
         ctx_[ctx]->outstanding.load(std::memory_order_acquire) == 0;
}

uint64_t ProxyBackend::outstanding(ContextId ctx) const {
  return ctx_[check_ctx(ctx)]->outstanding.load(std::memory_order_acquire);
}

}  // namespace ginsim
