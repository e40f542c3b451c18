#include "doctest.h"

#include <random>

#include "ginsim/descriptor.hpp"

using namespace ginsim;

namespace {

uint64_t le64_at(const EncodedDescriptor& b, size_t off) {
  uint64_t v = 0;
  for (size_t i = 0; i < 8; ++i) v |= uint64_t(std::to_integer<uint8_t>(b[off + i])) << (8 * i);
  return v;
}

uint32_t le32_at(const EncodedDescriptor& b, size_t off) {
  uint32_t v = 0;
  for (size_t i = 0; i < 4; ++i) v |= uint32_t(std::to_integer<uint8_t>(b[off + i])) << (8 * i);
  return v;
}

// Independent generator of valid descriptors for the round-trip oracle.
Descriptor random_valid(std::mt19937_64& rng) {
  auto u64 = [&] { return rng(); };
  auto u32 = [&] { return static_cast<uint32_t>(rng()); };

  CompletionAction action;
  switch (rng() % 4) {
    case 0: break;
    case 1: action.remote_signal = {u32() % 4096, SignalOp::inc()}; break;
    case 2: action.remote_signal = {u32() % 4096, SignalOp::add(u64())}; break;
    case 3:
      action.remote_signal = {u32() % 4096, SignalOp::add(u64())};
      action.local_counter = u32() % 4096;
      break;
  }
  if (rng() % 2) action.local_counter = u32() % 4096;

  switch (rng() % 3) {
    case 0:
      return make_put_descriptor(static_cast<TeamId>(rng()), u32(), u32(), u64(),
                                 u32() & 0x7FFFFFFF, u64(), u64(), action);
    case 1:
      return make_put_inline_descriptor(static_cast<TeamId>(rng()), u32(), u32(), u64(), u64(),
                                        rng() % 9, action);
    default: {
      SignalOp op = (rng() % 2) ? SignalOp::add(u64()) : SignalOp::inc();
      CompletionAction rest;
      rest.local_counter = action.local_counter;
      return make_signal_descriptor(static_cast<TeamId>(rng()), u32(), u32() % 4096, op, rest);
    }
  }
}

}  // namespace

TEST_CASE("put descriptor layout golden bytes") {
  // LL dispatch-sized put with SignalAdd(1).
  Descriptor d = make_put_descriptor(0, 1, 2, 0x40, 7, 0x100, 14352,
                                     CompletionAction::signal(9, SignalOp::add(1)));
  EncodedDescriptor b = encode_descriptor(d);
  CHECK(b.size() == 64);
  CHECK(std::to_integer<uint8_t>(b[0]) == 0x01);  // PUT
  CHECK(std::to_integer<uint8_t>(b[1]) ==
        (descriptor_flags::kHasSignal | descriptor_flags::kSignalIsAdd));
  CHECK(le32_at(b, 4) == 1);       // peer
  CHECK(le32_at(b, 8) == 2);       // dst window
  CHECK(le32_at(b, 12) == 7);      // src window
  CHECK(le64_at(b, 16) == 0x40);   // dst offset
  CHECK(le64_at(b, 24) == 0x100);  // src offset
  CHECK(le64_at(b, 32) == 14352);  // bytes
  CHECK(le32_at(b, 40) == 9);      // signal id
  CHECK(le64_at(b, 48) == 1);      // operand
  CHECK(le64_at(b, 56) == 0);      // reserved
  CHECK(decode_descriptor(b) == d);
}

TEST_CASE("signal-only descriptor encodes zero bytes") {
  Descriptor d = make_signal_descriptor(0, 3, 0, SignalOp::inc());
  EncodedDescriptor b = encode_descriptor(d);
  CHECK(std::to_integer<uint8_t>(b[0]) == 0x03);
  CHECK(le64_at(b, 32) == 0);
  CHECK(le32_at(b, 12) == 0xFFFFFFFFu);  // inline sentinel
  CHECK(decode_descriptor(b) == d);
}

TEST_CASE("inline payload over 8 bytes is invalid") {
  Descriptor d = make_put_inline_descriptor(0, 1, 2, 0, 0xABCD, 9, {});
  CHECK_THROWS_AS(encode_descriptor(d), InvalidDescriptor);
}

TEST_CASE("descriptor invariant violations are invalid") {
  Descriptor d = make_put_descriptor(0, 1, 2, 0, 3, 0, 64, {});
  SUBCASE("put with inline sentinel source") {
    d.src_window = kInlineWindow;
    CHECK_THROWS_AS(encode_descriptor(d), InvalidDescriptor);
  }
  SUBCASE("signal fields without HAS_SIGNAL") {
    d.signal_id = 4;
    CHECK_THROWS_AS(encode_descriptor(d), InvalidDescriptor);
  }
  SUBCASE("Inc with operand != 1") {
    d.flags |= descriptor_flags::kHasSignal;
    d.signal_operand = 5;
    CHECK_THROWS_AS(encode_descriptor(d), InvalidDescriptor);
  }
  SUBCASE("reserved flag bits") {
    d.flags = 0x80;
    CHECK_THROWS_AS(encode_descriptor(d), InvalidDescriptor);
  }
}

TEST_CASE("decode rejects malformed buffers") {
  SUBCASE("all zero: opcode 0 undefined") {
    EncodedDescriptor zero{};
    CHECK_THROWS_AS(decode_descriptor(zero), MalformedDescriptor);
  }
  SUBCASE("unknown opcode") {
    EncodedDescriptor b = encode_descriptor(make_signal_descriptor(0, 0, 0, SignalOp::inc()));
    b[0] = std::byte{0x7F};
    CHECK_THROWS_AS(decode_descriptor(b), MalformedDescriptor);
  }
  SUBCASE("reserved word nonzero") {
    EncodedDescriptor b = encode_descriptor(make_signal_descriptor(0, 0, 0, SignalOp::inc()));
    b[60] = std::byte{1};
    CHECK_THROWS_AS(decode_descriptor(b), MalformedDescriptor);
  }
  SUBCASE("wrong length") {
    std::vector<std::byte> small(63);
    CHECK_THROWS_AS(decode_descriptor(std::span<const std::byte>(small)), MalformedDescriptor);
  }
}

TEST_CASE("codec round-trips 10^4 randomized descriptors") {
  std::mt19937_64 rng(0xD15C0);
  for (int i = 0; i < 10'000; ++i) {
    Descriptor d = random_valid(rng);
    EncodedDescriptor b = encode_descriptor(d);
    static_assert(sizeof(b) == kDescriptorBytes);
    CHECK(decode_descriptor(b) == d);
  }
}
