#include "ginsim/wire.hpp"

#include <cstring>
#include <string>

namespace ginsim {
namespace {

template <typename T>
void put_le(std::vector<std::byte>& out, T v) {
  for (size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::byte>((static_cast<uint64_t>(v) >> (8 * i)) & 0xFF));
  }
}

template <typename T>
T get_le(std::span<const std::byte> b, size_t off) {
  uint64_t v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<uint64_t>(std::to_integer<uint8_t>(b[off + i])) << (8 * i);
  }
  return static_cast<T>(v);
}

void put_header(std::vector<std::byte>& out, FrameType type, RankId src, ContextId ctx,
                uint64_t seq_or_watermark) {
  put_le<uint32_t>(out, kFrameMagic);
  put_le<uint8_t>(out, static_cast<uint8_t>(type));
  put_le<uint32_t>(out, src);
  put_le<uint16_t>(out, ctx);
  put_le<uint16_t>(out, 0);
  put_le<uint64_t>(out, seq_or_watermark);
}

}  // namespace

std::vector<std::byte> encode_put_frame(RankId src, ContextId ctx, uint64_t seq,
                                        WindowId dst_window, uint64_t dst_offset,
                                        std::span<const std::byte> payload) {
  std::vector<std::byte> out;
  out.reserve(kFrameHeaderBytes + 20 + payload.size());
  put_header(out, FrameType::Put, src, ctx, seq);
  put_le<uint32_t>(out, dst_window);
  put_le<uint64_t>(out, dst_offset);
  put_le<uint64_t>(out, payload.size());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

std::vector<std::byte> encode_signal_frame(RankId src, ContextId ctx, uint64_t watermark,
                                           SignalId id, SignalOp op) {
  std::vector<std::byte> out;
  out.reserve(kFrameHeaderBytes + 16);
  put_header(out, FrameType::Signal, src, ctx, watermark);
  put_le<uint32_t>(out, id);
  put_le<uint8_t>(out, op.kind == SignalKind::Add ? 1 : 0);
  put_le<uint8_t>(out, 0);
  put_le<uint8_t>(out, 0);
  put_le<uint8_t>(out, 0);
  put_le<uint64_t>(out, op.kind == SignalKind::Add ? op.operand : 1);
  return out;
}

std::vector<std::byte> encode_ack_frame(RankId src, ContextId ctx, uint64_t seq) {
  std::vector<std::byte> out;
  out.reserve(kFrameHeaderBytes);
  put_header(out, FrameType::Ack, src, ctx, seq);
  return out;
}

std::vector<std::byte> encode_control_frame(RankId src, std::span<const std::byte> blob) {
  std::vector<std::byte> out;
  out.reserve(kFrameHeaderBytes + 8 + blob.size());
  put_header(out, FrameType::Control, src, 0, 0);
  put_le<uint64_t>(out, blob.size());
  out.insert(out.end(), blob.begin(), blob.end());
  return out;
}

void FrameParser::feed(std::span<const std::byte> data) {
  // Compact once the consumed prefix dominates.
  if (consumed_ > 0 && consumed_ >= buf_.size() / 2) {
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<ptrdiff_t>(consumed_));
    consumed_ = 0;
  }
  buf_.insert(buf_.end(), data.begin(), data.end());
}

std::optional<ParsedFrame> FrameParser::next() {
  std::span<const std::byte> b(buf_.data() + consumed_, buf_.size() - consumed_);
  if (b.size() < kFrameHeaderBytes) return std::nullopt;

  if (get_le<uint32_t>(b, 0) != kFrameMagic) throw MalformedFrame("bad frame magic");
  const uint8_t type = get_le<uint8_t>(b, 4);
  if (type < 1 || type > 4) throw MalformedFrame("unknown frame type " + std::to_string(type));
  if (get_le<uint16_t>(b, 11) != 0) throw MalformedFrame("frame padding not zero");

  ParsedFrame f;
  f.type = static_cast<FrameType>(type);
  f.src_rank = get_le<uint32_t>(b, 5);
  f.ctx = get_le<uint16_t>(b, 9);
  f.seq_or_watermark = get_le<uint64_t>(b, 13);

  size_t need = kFrameHeaderBytes;
  switch (f.type) {
    case FrameType::Put: {
      if (b.size() < need + 20) return std::nullopt;
      f.dst_window = get_le<uint32_t>(b, need);
      f.dst_offset = get_le<uint64_t>(b, need + 4);
      const uint64_t len = get_le<uint64_t>(b, need + 12);
      need += 20;
      if (b.size() < need + len) return std::nullopt;
      f.payload.assign(b.begin() + need, b.begin() + need + len);
      need += len;
      break;
    }
    case FrameType::Signal: {
      if (b.size() < need + 16) return std::nullopt;
      f.signal_id = get_le<uint32_t>(b, need);
      const uint8_t kind = get_le<uint8_t>(b, need + 4);
      if (kind > 1) throw MalformedFrame("unknown signal op " + std::to_string(kind));
      const uint64_t operand = get_le<uint64_t>(b, need + 8);
      f.op = (kind == 1) ? SignalOp::add(operand) : SignalOp::inc();
      need += 16;
      break;
    }
    case FrameType::Ack:
      break;
    case FrameType::Control: {
      if (b.size() < need + 8) return std::nullopt;
      const uint64_t len = get_le<uint64_t>(b, need);
      need += 8;
      if (b.size() < need + len) return std::nullopt;
      f.blob.assign(b.begin() + need, b.begin() + need + len);
      need += len;
      break;
    }
  }
  consumed_ += need;
  return f;
}

}  // namespace ginsim
