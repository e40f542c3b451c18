#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "ginsim/descriptor.hpp"
#include "ginsim/plugin.hpp"

namespace ginsim {

// Fixed-capacity multi-producer / single-consumer ring of 64-byte descriptors.
// Producers claim a ticket, write the descriptor into its slot, then publish
// by bumping the slot-sequence word; the consumer only reads a slot after the
// publish store, so a partially written descriptor is never visible. FIFO in
// ticket order; nothing is lost or duplicated. A full ring makes submit spin
// (with yields) until the consumer frees a slot.
//
// Slot layout: 8-byte slot-sequence word followed by the 64-byte descriptor
// (72-byte stride).
class DescriptorRing {
 public:
  explicit DescriptorRing(size_t capacity = 1024);  // must be a power of two

  DescriptorRing(const DescriptorRing&) = delete;
  DescriptorRing& operator=(const DescriptorRing&) = delete;

  size_t capacity() const { return mask_ + 1; }

  // Multi-producer. Returns after the descriptor is published.
  void submit(const EncodedDescriptor& d);

  // Single consumer. False when no published descriptor is available.
  bool pop(EncodedDescriptor& out);

  // Tickets issued so far; everything below this is published or about to be.
  uint64_t submitted() const { return head_.load(std::memory_order_acquire); }
  uint64_t consumed() const { return tail_.load(std::memory_order_acquire); }

  struct Slot {
    std::atomic<uint64_t> seq;
    EncodedDescriptor bytes;
  };
  static_assert(sizeof(Slot) == 72, "slot stride is the 8-byte sequence word plus the descriptor");

 private:
  std::unique_ptr<Slot[]> slots_;
  size_t mask_;
  std::atomic<uint64_t> head_{0};
  std::atomic<uint64_t> tail_{0};
};

// CPU-assisted path: submitters publish descriptors into per-context rings;
// one progress agent per communicator drains them, posts through the plugin's
// iput/iput_signal interface, polls test(), and retires completions into the
// submitter-visible counter cells.
class ProxyBackend {
 public:
  struct Hooks {
    // Team-relative peer -> world rank (the descriptor carries team ids).
    std::function<RankId(TeamId, uint32_t)> resolve_peer;
    std::function<void(CounterId)> bump_counter;
  };

  ProxyBackend(FabricPlugin& plugin, uint32_t n_contexts, size_t ring_capacity, Hooks hooks,
               size_t batch = 64);

  ProxyBackend(const ProxyBackend&) = delete;
  ProxyBackend& operator=(const ProxyBackend&) = delete;

  uint32_t n_contexts() const { return static_cast<uint32_t>(rings_.size()); }

  // Fire-and-forget publish; any agent. Validates the descriptor up front.
  void submit(ContextId ctx, const Descriptor& d);

  // One drain-post-retire pass; progress agent only. Drains at most `batch`
  // descriptors per ring (so a signal-bearing descriptor is never starved
  // behind an unbounded run of bulk puts), then retires completions.
  size_t progress_once();

  // Flush bookkeeping: a context is flushed once every ticket issued before
  // the snapshot has been consumed and nothing on the context is outstanding.
  uint64_t flush_snapshot(ContextId ctx) const;
  bool flush_satisfied(ContextId ctx, uint64_t snapshot) const;

  uint64_t outstanding(ContextId ctx) const;

 private:
  FabricPlugin& plugin_;
  Hooks hooks_;
  size_t batch_;
  std::vector<std::unique_ptr<DescriptorRing>> rings_;

  struct CtxState {
    std::vector<RequestId> in_flight;
    std::atomic<uint64_t> outstanding{0};
  };
  std::vector<std::unique_ptr<CtxState>> ctx_;

  ContextId check_ctx(ContextId ctx) const;
};

}  // namespace ginsim
