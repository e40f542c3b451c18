#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "ginsim/types.hpp"

namespace ginsim {

// One one-sided operation plus its completion actions, in exactly 64 bytes.
// Submitters publish the encoded form into descriptor rings; the proxy agent
// decodes and posts. Layout (little-endian):
//
//   off  0  opcode            u8   0x01 PUT, 0x02 PUT_INLINE, 0x03 SIGNAL_ONLY
//   off  1  flags             u8   bit0 HAS_SIGNAL, bit1 SIGNAL_IS_ADD, bit2 HAS_COUNTER
//   off  2  team              u16
//   off  4  peer              u32  team-relative
//   off  8  dst_window        u32
//   off 12  src_window        u32  0xFFFF_FFFF = inline
//   off 16  dst_offset        u64
//   off 24  src_offset_or_value u64
//   off 32  bytes             u64
//   off 40  signal_id         u32
//   off 44  counter_id        u32
//   off 48  signal_operand    u64
//   off 56  reserved          u64  must be 0

inline constexpr size_t kDescriptorBytes = 64;

using EncodedDescriptor = std::array<std::byte, kDescriptorBytes>;

enum class Opcode : uint8_t {
  Put = 0x01,
  PutInline = 0x02,
  SignalOnly = 0x03,
};

namespace descriptor_flags {
inline constexpr uint8_t kHasSignal = 1u << 0;
inline constexpr uint8_t kSignalIsAdd = 1u << 1;
inline constexpr uint8_t kHasCounter = 1u << 2;
inline constexpr uint8_t kAll = kHasSignal | kSignalIsAdd | kHasCounter;
}  // namespace descriptor_flags

struct Descriptor {
  Opcode opcode = Opcode::Put;
  uint8_t flags = 0;
  TeamId team = 0;
  RankId peer = 0;
  WindowId dst_window = 0;
  WindowId src_window = 0;
  uint64_t dst_offset = 0;
  uint64_t src_offset_or_value = 0;
  uint64_t bytes = 0;
  SignalId signal_id = 0;
  CounterId counter_id = 0;
  uint64_t signal_operand = 0;

  bool has_signal() const { return flags & descriptor_flags::kHasSignal; }
  bool signal_is_add() const { return flags & descriptor_flags::kSignalIsAdd; }
  bool has_counter() const { return flags & descriptor_flags::kHasCounter; }
  bool is_inline() const { return src_window == kInlineWindow; }

  SignalOp signal_op() const {
    return signal_is_add() ? SignalOp::add(signal_operand) : SignalOp::inc();
  }
  CompletionAction action() const;

  friend bool operator==(const Descriptor&, const Descriptor&) = default;
};

// Builders producing normalized descriptors (unused fields zeroed so that
// encode/decode round-trips compare equal).
Descriptor make_put_descriptor(TeamId team, RankId peer, WindowId dst_window, uint64_t dst_offset,
                               WindowId src_window, uint64_t src_offset, uint64_t bytes,
                               const CompletionAction& action);
Descriptor make_put_inline_descriptor(TeamId team, RankId peer, WindowId dst_window,
                                      uint64_t dst_offset, uint64_t value, uint64_t bytes,
                                      const CompletionAction& action);
Descriptor make_signal_descriptor(TeamId team, RankId peer, SignalId id, SignalOp op,
                                  const CompletionAction& action = {});

// Throws InvalidDescriptor when d violates an invariant (bad opcode, inline
// payload over 8 bytes, signal fields set without HAS_SIGNAL, ...).
void validate_descriptor(const Descriptor& d);

// Deterministic 64-byte encoding of a valid descriptor.
EncodedDescriptor encode_descriptor(const Descriptor& d);

// Inverse of encode on valid encodings; throws MalformedDescriptor on unknown
// opcode, reserved bits/words not zero, or fields inconsistent with flags.
Descriptor decode_descriptor(const EncodedDescriptor& buf);
Descriptor decode_descriptor(std::span<const std::byte> buf);  // must be 64 bytes

}  // namespace ginsim
