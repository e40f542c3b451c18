#include "ginsim/descriptor.hpp"

#include <algorithm>
#include <cstring>
#include <string>

namespace ginsim {
namespace {

// Little-endian field access independent of host byte order.
template <typename T>
void store_le(std::span<std::byte> buf, size_t off, T v) {
  for (size_t i = 0; i < sizeof(T); ++i) {
    buf[off + i] = static_cast<std::byte>((static_cast<uint64_t>(v) >> (8 * i)) & 0xFF);
  }
}

template <typename T>
T load_le(std::span<const std::byte> buf, size_t off) {
  uint64_t v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<uint64_t>(std::to_integer<uint8_t>(buf[off + i])) << (8 * i);
  }
  return static_cast<T>(v);
}

[[noreturn]] void invalid(const std::string& what) { throw InvalidDescriptor(what); }
[[noreturn]] void malformed(const std::string& what) { throw MalformedDescriptor(what); }

// Shared between validate (InvalidDescriptor) and decode (MalformedDescriptor):
// returns a reason string or empty when d is well-formed.
std::string check(const Descriptor& d) {
  switch (d.opcode) {
    case Opcode::Put:
      if (d.is_inline()) return "PUT with inline src_window";
      break;
    case Opcode::PutInline:
      if (!d.is_inline()) return "PUT_INLINE requires inline src_window sentinel";
      if (d.bytes > kMaxInlineBytes) return "inline payload over 8 bytes";
      break;
    case Opcode::SignalOnly:
      if (d.bytes != 0) return "SIGNAL_ONLY with nonzero bytes";
      if (!d.has_signal()) return "SIGNAL_ONLY without HAS_SIGNAL";
      if (!d.is_inline()) return "SIGNAL_ONLY carries no source window";
      if (d.dst_window != 0 || d.dst_offset != 0 || d.src_offset_or_value != 0)
        return "SIGNAL_ONLY with nonzero transfer fields";
      break;
    default:
      return "unknown opcode " + std::to_string(static_cast<unsigned>(d.opcode));
  }
  if (d.flags & ~descriptor_flags::kAll) return "reserved flag bits set";
  if (d.has_signal()) {
    if (!d.signal_is_add() && d.signal_operand != 1) return "Inc signal with operand != 1";
  } else {
    if (d.signal_is_add()) return "SIGNAL_IS_ADD without HAS_SIGNAL";
    if (d.signal_id != 0 || d.signal_operand != 0) return "signal fields set without HAS_SIGNAL";
  }
  if (!d.has_counter() && d.counter_id != 0) return "counter_id set without HAS_COUNTER";
  return {};
}

}  // namespace

CompletionAction Descriptor::action() const {
  CompletionAction a;
  if (has_signal()) a.remote_signal = CompletionAction::RemoteSignal{signal_id, signal_op()};
  if (has_counter()) a.local_counter = counter_id;
  return a;
}

namespace {

void apply_action(Descriptor& d, const CompletionAction& action) {
  if (action.remote_signal) {
    d.flags |= descriptor_flags::kHasSignal;
    d.signal_id = action.remote_signal->id;
    if (action.remote_signal->op.kind == SignalKind::Add) {
      d.flags |= descriptor_flags::kSignalIsAdd;
      d.signal_operand = action.remote_signal->op.operand;
    } else {
      d.signal_operand = 1;
    }
  }
  if (action.local_counter) {
    d.flags |= descriptor_flags::kHasCounter;
    d.counter_id = *action.local_counter;
  }
}

}  // namespace

Descriptor make_put_descriptor(TeamId team, RankId peer, WindowId dst_window, uint64_t dst_offset,
                               WindowId src_window, uint64_t src_offset, uint64_t bytes,
                               const CompletionAction& action) {
  Descriptor d;
  d.opcode = Opcode::Put;
  d.team = team;
  d.peer = peer;
  d.dst_window = dst_window;
  d.dst_offset = dst_offset;
  d.src_window = src_window;
  d.src_offset_or_value = src_offset;
  d.bytes = bytes;
  apply_action(d, action);
  return d;
}

Descriptor make_put_inline_descriptor(TeamId team, RankId peer, WindowId dst_window,
                                      uint64_t dst_offset, uint64_t value, uint64_t bytes,
                                      const CompletionAction& action) {
  Descriptor d;
  d.opcode = Opcode::PutInline;
  d.team = team;
  d.peer = peer;
  d.dst_window = dst_window;
  d.dst_offset = dst_offset;
  d.src_window = kInlineWindow;
  d.src_offset_or_value = value;
  d.bytes = bytes;
  apply_action(d, action);
  return d;
}

Descriptor make_signal_descriptor(TeamId team, RankId peer, SignalId id, SignalOp op,
                                  const CompletionAction& action) {
  Descriptor d;
  d.opcode = Opcode::SignalOnly;
  d.team = team;
  d.peer = peer;
  d.src_window = kInlineWindow;
  apply_action(d, action);
  d.flags |= descriptor_flags::kHasSignal;
  d.signal_id = id;
  if (op.kind == SignalKind::Add) {
    d.flags |= descriptor_flags::kSignalIsAdd;
    d.signal_operand = op.operand;
  } else {
    d.flags &= static_cast<uint8_t>(~descriptor_flags::kSignalIsAdd);
    d.signal_operand = 1;
  }
  return d;
}

void validate_descriptor(const Descriptor& d) {
  if (auto why = check(d); !why.empty()) invalid(why);
}

EncodedDescriptor encode_descriptor(const Descriptor& d) {
  validate_descriptor(d);
  EncodedDescriptor out{};
  std::span<std::byte> b(out);
  store_le<uint8_t>(b, 0, static_cast<uint8_t>(d.opcode));
  store_le<uint8_t>(b, 1, d.flags);
  store_le<uint16_t>(b, 2, d.team);
  store_le<uint32_t>(b, 4, d.peer);
  store_le<uint32_t>(b, 8, d.dst_window);
  store_le<uint32_t>(b, 12, d.src_window);
  store_le<uint64_t>(b, 16, d.dst_offset);
  store_le<uint64_t>(b, 24, d.src_offset_or_value);
  store_le<uint64_t>(b, 32, d.bytes);
  store_le<uint32_t>(b, 40, d.signal_id);
  store_le<uint32_t>(b, 44, d.counter_id);
  store_le<uint64_t>(b, 48, d.signal_operand);
  store_le<uint64_t>(b, 56, 0);
  return out;
}

Descriptor decode_descriptor(const EncodedDescriptor& buf) {
  std::span<const std::byte> b(buf);
  Descriptor d;
  const uint8_t opcode = load_le<uint8_t>(b, 0);
  if (opcode < static_cast<uint8_t>(Opcode::Put) || opcode > static_cast<uint8_t>(Opcode::SignalOnly)) {
    malformed("unknown opcode " + std::to_string(opcode));
  }
  d.opcode = static_cast<Opcode>(opcode);
  d.flags = load_le<uint8_t>(b, 1);
  d.team = load_le<uint16_t>(b, 2);
  d.peer = load_le<uint32_t>(b, 4);
  d.dst_window = load_le<uint32_t>(b, 8);
  d.src_window = load_le<uint32_t>(b, 12);
  d.dst_offset = load_le<uint64_t>(b, 16);
  d.src_offset_or_value = load_le<uint64_t>(b, 24);
  d.bytes = load_le<uint64_t>(b, 32);
  d.signal_id = load_le<uint32_t>(b, 40);
  d.counter_id = load_le<uint32_t>(b, 44);
  d.signal_operand = load_le<uint64_t>(b, 48);
  if (load_le<uint64_t>(b, 56) != 0) malformed("reserved word not zero");
  if (auto why = check(d); !why.empty()) malformed(why);
  return d;
}

Descriptor decode_descriptor(std::span<const std::byte> buf) {
  if (buf.size() != kDescriptorBytes) {
    malformed("descriptor must be exactly 64 bytes, got " + std::to_string(buf.size()));
  }
  EncodedDescriptor fixed;
  std::copy(buf.begin(), buf.end(), fixed.begin());
  return decode_descriptor(fixed);
}

}  // namespace ginsim
