#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ginsim/fabric.hpp"

namespace ginsim {

// Socket framing, little-endian, one frame per message:
//   magic u32 = 0x474E4931 ("GIN1"); type u8 (1 Put, 2 Signal, 3 Ack,
//   4 Control); src_rank u32; ctx u16; pad u16 = 0; seq_or_watermark u64;
// then per type:
//   Put     { dst_window u32, dst_offset u64, len u64, payload len bytes }
//   Signal  { signal_id u32, op u8 (0 Inc, 1 Add), pad3, operand u64 }
//   Ack     { }                       (the seq field suffices)
//   Control { len u64, blob }
// Frames on a connection are FIFO, so a channel riding one connection only
// ever sees cross-channel reordering.

inline constexpr uint32_t kFrameMagic = 0x474E4931;  // "GIN1"
inline constexpr size_t kFrameHeaderBytes = 21;

enum class FrameType : uint8_t {
  Put = 1,
  Signal = 2,
  Ack = 3,
  Control = 4,
};

// src_rank identifies the frame's sender: the channel source for Put/Signal,
// the put's receiver for Ack, the speaking rank for Control.
struct ParsedFrame {
  FrameType type = FrameType::Control;
  RankId src_rank = 0;
  ContextId ctx = 0;
  uint64_t seq_or_watermark = 0;
  WindowId dst_window = 0;
  uint64_t dst_offset = 0;
  std::vector<std::byte> payload;  // put payload
  SignalId signal_id = 0;
  SignalOp op;
  std::vector<std::byte> blob;  // control body
};

std::vector<std::byte> encode_put_frame(RankId src, ContextId ctx, uint64_t seq,
                                        WindowId dst_window, uint64_t dst_offset,
                                        std::span<const std::byte> payload);
std::vector<std::byte> encode_signal_frame(RankId src, ContextId ctx, uint64_t watermark,
                                           SignalId id, SignalOp op);
std::vector<std::byte> encode_ack_frame(RankId src, ContextId ctx, uint64_t seq);
std::vector<std::byte> encode_control_frame(RankId src, std::span<const std::byte> blob);

// Incremental decoder over a byte stream; frames may arrive split or
// coalesced. Throws MalformedFrame on bad magic, type, or padding.
class FrameParser {
 public:
  void feed(std::span<const std::byte> data);
  std::optional<ParsedFrame> next();
  size_t buffered() const { return buf_.size() - consumed_; }

 private:
  std::vector<std::byte> buf_;
  size_t consumed_ = 0;
};

}  // namespace ginsim
