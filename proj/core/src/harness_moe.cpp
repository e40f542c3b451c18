#include <cstring>
#include <random>
#include <set>
#include <string>

#include "ginsim/harness.hpp"

namespace ginsim {

namespace {

// ----- deterministic data: routing, payloads, expert transform, weights -----
// Everything below is a pure function of (seed, rank, token, ...), so every
// rank can recompute any expected value locally; verification never needs the
// wire.

uint64_t mix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// The token's top_k distinct experts.
std::vector<uint32_t> route_token(const MoeConfig& cfg, RankId src, uint32_t token) {
  std::mt19937_64 rng(mix64(cfg.seed ^ mix64(src * 100003ull + token)));
  std::set<uint32_t> picked;
  while (picked.size() < cfg.top_k) picked.insert(static_cast<uint32_t>(rng() % cfg.experts));
  return {picked.begin(), picked.end()};
}

uint16_t token_element(const MoeConfig& cfg, RankId src, uint32_t token, uint32_t i) {
  return static_cast<uint16_t>(cfg.seed + src * 7919 + token * 131 + i * 13);
}

uint16_t expert_transform(uint16_t in, uint32_t expert) {
  return static_cast<uint16_t>(in * 3 + expert * 17 + 1);
}

uint16_t combine_weight(RankId src, uint32_t token, uint32_t k) {
  return static_cast<uint16_t>(1 + (src + 3 * token + 5 * k) % 7);
}

// Sequential oracle for one (rank, token): route, transform, weighted-sum, in
// plain uint16 wraparound arithmetic.
std::vector<uint16_t> oracle_combine(const MoeConfig& cfg, RankId src, uint32_t token) {
  std::vector<uint16_t> out(cfg.hidden, 0);
  const auto experts = route_token(cfg, src, token);
  for (uint32_t k = 0; k < cfg.top_k; ++k) {
    const uint16_t w = combine_weight(src, token, k);
    for (uint32_t i = 0; i < cfg.hidden; ++i) {
      const uint16_t expert_out = expert_transform(token_element(cfg, src, token, i), experts[k]);
      out[i] = static_cast<uint16_t>(out[i] + w * expert_out);
    }
  }
  return out;
}

void store_u16(std::byte* p, uint16_t v) {
  p[0] = static_cast<std::byte>(v & 0xFF);
  p[1] = static_cast<std::byte>(v >> 8);
}

uint16_t load_u16(const std::byte* p) {
  return static_cast<uint16_t>(std::to_integer<uint8_t>(p[0]) |
                               (std::to_integer<uint8_t>(p[1]) << 8));
}

void store_u32(std::byte* p, uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<std::byte>((v >> (8 * i)) & 0xFF);
}

uint32_t load_u32(const std::byte* p) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= uint32_t(std::to_integer<uint8_t>(p[i])) << (8 * i);
  return v;
}

// Dispatch message: hidden u16 elements then 16 bytes of metadata
// {src u32, token u32, k u32, tag u32 != 0}.
struct Meta {
  uint32_t src;
  uint32_t token;
  uint32_t k;
  uint32_t tag;
};

void write_meta(std::byte* msg, uint64_t payload_bytes, const Meta& m) {
  store_u32(msg + payload_bytes + 0, m.src);
  store_u32(msg + payload_bytes + 4, m.token);
  store_u32(msg + payload_bytes + 8, m.k);
  store_u32(msg + payload_bytes + 12, m.tag);
}

Meta read_meta(const std::byte* msg, uint64_t payload_bytes) {
  return Meta{load_u32(msg + payload_bytes + 0), load_u32(msg + payload_bytes + 4),
              load_u32(msg + payload_bytes + 8), load_u32(msg + payload_bytes + 12)};
}

}  // namespace

// ---------------------------------------------------------------------------
// Low-latency dispatch/combine

void moe_ll_rank_program(DevComm& comm, const MoeConfig& cfg, RankState* out) {
  const uint32_t n = comm.world_size();
  const RankId r = comm.rank();
  const Team& world = comm.world_team();
  const uint32_t e_local = cfg.experts / n;
  const uint32_t n_ctx = comm.config().n_contexts;
  const uint64_t dmsg = cfg.dispatch_message_bytes();
  const uint64_t cmsg = cfg.combine_message_bytes();
  const uint32_t T = cfg.tokens_per_rank;
  const uint32_t K = cfg.top_k;

  // Signals: one per local expert (dispatch release), plus one combine flag.
  // Each release SignalAdd carries (1 << 32) + count so the receiver learns
  // "every source reported" and the token total from a single cell.
  const SignalId combine_flag = e_local;

  // Worst case: one source routes all of its tokens to one expert.
  std::vector<std::byte> dispatch_recv(uint64_t{e_local} * n * T * dmsg);
  std::vector<std::byte> dispatch_stage(uint64_t{T} * K * dmsg);
  std::vector<std::byte> combine_recv(uint64_t{T} * K * cmsg);
  std::vector<std::byte> combine_stage(uint64_t{e_local} * n * T * cmsg);

  Window& w_dispatch = comm.window_register(dispatch_recv);
  Window& w_dstage = comm.window_register(dispatch_stage);
  Window& w_combine = comm.window_register(combine_recv);
  Window& w_cstage = comm.window_register(combine_stage);

  std::vector<Gin> gins;
  for (uint32_t c = 0; c < n_ctx; ++c) gins.emplace_back(comm, static_cast<ContextId>(c));

  auto dispatch_slot_offset = [&](uint32_t e_loc, RankId src, uint32_t slot) {
    return ((uint64_t{e_loc} * n + src) * T + slot) * dmsg;
  };

  // --- dispatch: stage each routed token, put it into the owner's per-expert
  // region, then release each expert with SignalAdd((1<<32) + count). ---
  std::vector<uint32_t> sent_to_expert(cfg.experts, 0);
  uint32_t stage_idx = 0;
  for (uint32_t t = 0; t < T; ++t) {
    const auto experts = route_token(cfg, r, t);
    for (uint32_t k = 0; k < K; ++k) {
      const uint32_t e = experts[k];
      const RankId dst = e / e_local;
      const uint32_t e_loc = e % e_local;
      const uint32_t slot = sent_to_expert[e]++;

      std::byte* msg = dispatch_stage.data() + uint64_t{stage_idx} * dmsg;
      for (uint32_t i = 0; i < cfg.hidden; ++i) {
        store_u16(msg + uint64_t{i} * 2, token_element(cfg, r, t, i));
      }
      write_meta(msg, uint64_t{cfg.hidden} * 2, Meta{r, t, k, k + 1});

      Gin& gin = gins[e % n_ctx];
      gin.put(world, dst, w_dispatch, dispatch_slot_offset(e_loc, r, slot), w_dstage,
              uint64_t{stage_idx} * dmsg, dmsg);
      ++stage_idx;
    }
  }
  for (uint32_t e = 0; e < cfg.experts; ++e) {
    const RankId dst = e / e_local;
    gins[e % n_ctx].signal(world, dst, e % e_local,
                           SignalOp::add((uint64_t{1} << 32) + sent_to_expert[e]));
  }

  // --- expert side: acquire each local expert, verify and transform its
  // tokens, put outputs back to their sources, then flag each source. ---
  std::vector<std::vector<uint32_t>> combine_counts(n, std::vector<uint32_t>(n_ctx, 0));
  uint32_t cstage_idx = 0;
  for (uint32_t e_loc = 0; e_loc < e_local; ++e_loc) {
    const uint32_t e = r * e_local + e_loc;
    comm.wait_signal(e_loc, uint64_t{n} << 32);
    const uint64_t cell = comm.read_signal(e_loc);
    const uint64_t expected_tokens = cell & 0xFFFFFFFFull;

    uint64_t seen = 0;
    for (RankId src = 0; src < n; ++src) {
      for (uint32_t slot = 0; slot < T; ++slot) {
        const std::byte* msg = dispatch_recv.data() + dispatch_slot_offset(e_loc, src, slot);
        const Meta meta = read_meta(msg, uint64_t{cfg.hidden} * 2);
        if (meta.tag == 0) break;  // senders fill slots densely
        if (meta.src != src) {
          throw VerificationFailure("moe-ll: expert " + std::to_string(e) +
                                    " saw a message from the wrong source");
        }
        for (uint32_t i = 0; i < cfg.hidden; ++i) {
          if (load_u16(msg + uint64_t{i} * 2) != token_element(cfg, src, meta.token, i)) {
            throw VerificationFailure("moe-ll: dispatch payload mismatch at expert " +
                                      std::to_string(e) + " element " + std::to_string(i));
          }
        }
        ++seen;

        std::byte* out_msg = combine_stage.data() + uint64_t{cstage_idx} * cmsg;
        for (uint32_t i = 0; i < cfg.hidden; ++i) {
          store_u16(out_msg + uint64_t{i} * 2,
                    expert_transform(load_u16(msg + uint64_t{i} * 2), e));
        }
        Gin& gin = gins[e % n_ctx];
        gin.put(world, src, w_combine, (uint64_t{meta.token} * K + meta.k) * cmsg, w_cstage,
                uint64_t{cstage_idx} * cmsg, cmsg);
        combine_counts[src][e % n_ctx]++;
        ++cstage_idx;
      }
    }
    if (seen != expected_tokens) {
      throw VerificationFailure("moe-ll: expert " + std::to_string(e) + " expected " +
                                std::to_string(expected_tokens) + " tokens, saw " +
                                std::to_string(seen));
    }
  }
  // Release flags per (source, context) so every combine put is covered by a
  // same-channel signal; each source waits for exactly tokens*top_k outputs.
  for (RankId src = 0; src < n; ++src) {
    for (uint32_t c = 0; c < n_ctx; ++c) {
      if (combine_counts[src][c] > 0) {
        gins[c].signal(world, src, combine_flag, SignalOp::add(combine_counts[src][c]));
      }
    }
  }

  // --- source side: acquire all outputs, reduce with top-k weights, compare
  // against the sequential oracle. ---
  comm.wait_signal(combine_flag, uint64_t{T} * K);
  for (uint32_t t = 0; t < T; ++t) {
    const auto expected = oracle_combine(cfg, r, t);
    for (uint32_t i = 0; i < cfg.hidden; ++i) {
      uint16_t acc = 0;
      for (uint32_t k = 0; k < K; ++k) {
        const std::byte* msg = combine_recv.data() + (uint64_t{t} * K + k) * cmsg;
        acc = static_cast<uint16_t>(acc + combine_weight(r, t, k) * load_u16(msg + uint64_t{i} * 2));
      }
      if (acc != expected[i]) {
        throw VerificationFailure("moe-ll: combine mismatch at rank " + std::to_string(r) +
                                  " token " + std::to_string(t) + " element " +
                                  std::to_string(i));
      }
    }
  }

  for (uint32_t c = 0; c < n_ctx; ++c) gins[c].flush();
  if (out) {
    out->windows.push_back({dispatch_recv.begin(), dispatch_recv.end()});
    out->windows.push_back({combine_recv.begin(), combine_recv.end()});
    out->cells = comm.snapshot_cells();
  }
}

MoeReport run_moe_ll(const LaunchOptions& opts, const MoeConfig& cfg) {
  if (cfg.mode != MoeMode::LowLatency) throw UsageError("run_moe_ll: config is not LL mode");
  if (opts.ranks < 2) throw UsageError("moe-ll needs at least 2 ranks");
  if (cfg.experts == 0 || cfg.experts % opts.ranks != 0) {
    throw UsageError("experts must be divisible by ranks");
  }
  if (cfg.tokens_per_rank == 0 || cfg.top_k == 0 || cfg.top_k > cfg.experts) {
    throw UsageError("need 1..experts routed experts per token and at least one token");
  }
  const uint32_t locals = cfg.experts / opts.ranks;
  const uint32_t usable_signals =
      opts.config.signal_cells - kBarrierSlots * kBarrierSteps;
  if (locals + 1 > usable_signals) {
    throw UsageError("per-expert signals plus the combine flag exceed the signal table");
  }

  MoeReport report;
  report.dispatch_message_bytes = cfg.dispatch_message_bytes();
  report.combine_message_bytes = cfg.combine_message_bytes();
  report.tokens_routed = uint64_t{cfg.tokens_per_rank} * cfg.top_k * opts.ranks;
  report.state.resize(opts.ranks);

  launch(opts, [&](DevComm& comm) {
    moe_ll_rank_program(comm, cfg, &report.state[comm.rank()]);
  });
  return report;
}

// ---------------------------------------------------------------------------
// High-throughput circular-buffer flow control

namespace {

constexpr uint64_t kHtSlotBytes = 256;  // 8-byte generation stamp + payload
constexpr uint64_t kHtPayload = kHtSlotBytes - 8;

std::byte ht_byte(uint32_t channel, uint32_t msg, uint64_t i, uint64_t seed) {
  return static_cast<std::byte>(seed + channel * 37 + msg * 11 + i);
}

}  // namespace

// Every rank is, per channel, a producer toward its successor and a consumer
// for its predecessor. Producer: wait for slot reuse (local head signal and a
// local-completion counter), write the stamped slot, put, SignalAdd the remote
// tail. Consumer: wait the tail, check the stamp and payload, SignalAdd the
// producer's head.
void moe_ht_rank_program(std::vector<DevComm*>& comms, const MoeConfig& cfg) {
  const uint32_t n = comms[0]->world_size();
  const RankId r = comms[0]->rank();
  const uint32_t B = cfg.slots;
  const uint32_t M = cfg.messages;
  const uint32_t n_ctx = comms[0]->config().n_contexts;
  const RankId succ = (r + 1) % n;
  const RankId pred = (r + n - 1) % n;

  struct CommPlane {
    std::vector<std::byte> recv;
    std::vector<std::byte> stage;
    Window* recv_win = nullptr;
    Window* stage_win = nullptr;
  };
  std::vector<CommPlane> planes(comms.size());
  for (size_t c = 0; c < comms.size(); ++c) {
    planes[c].recv.resize(uint64_t{n_ctx} * B * kHtSlotBytes);
    planes[c].stage.resize(uint64_t{n_ctx} * B * kHtSlotBytes);
    planes[c].recv_win = &comms[c]->window_register(planes[c].recv);
    planes[c].stage_win = &comms[c]->window_register(planes[c].stage);
  }

  for (uint32_t channel = 0; channel < cfg.channels; ++channel) {
    const PoolSelection sel = pool_select(channel, n_ctx);
    DevComm& comm = *comms.at(sel.comm_index);
    CommPlane& plane = planes[sel.comm_index];
    Gin gin(comm, static_cast<ContextId>(sel.context_index));
    const Team& world = comm.world_team();

    const SignalId tail_sig = 2 * sel.context_index;      // on the consumer
    const SignalId head_sig = 2 * sel.context_index + 1;  // on the producer
    const CounterId stage_ctr = sel.context_index;        // local stage reuse
    const uint64_t lane = uint64_t{sel.context_index} * B * kHtSlotBytes;

    for (uint32_t m = 0; m < M; ++m) {
      // -- producer step --
      if (m >= B) {
        gin.wait_signal(head_sig, m + 1 - B);   // remote slot consumed
        gin.wait_counter(stage_ctr, m + 1 - B); // stage slot locally complete
      }
      const uint64_t head = gin.read_signal(head_sig);
      if (head > m) {
        throw FlowControlViolation("ht: head " + std::to_string(head) + " ran past tail " +
                                   std::to_string(m) + " on channel " + std::to_string(channel));
      }
      std::byte* slot = plane.stage.data() + lane + (m % B) * kHtSlotBytes;
      const uint64_t generation = uint64_t{m} + 1;
      for (int i = 0; i < 8; ++i) {
        slot[i] = static_cast<std::byte>((generation >> (8 * i)) & 0xFF);
      }
      for (uint64_t i = 0; i < kHtPayload; ++i) slot[8 + i] = ht_byte(channel, m, i, cfg.seed);
      gin.put(world, succ, *plane.recv_win, lane + (m % B) * kHtSlotBytes, *plane.stage_win,
              lane + (m % B) * kHtSlotBytes, kHtSlotBytes, CompletionAction::counter(stage_ctr));
      gin.signal(world, succ, tail_sig, SignalOp::add(1));

      // -- consumer step --
      gin.wait_signal(tail_sig, m + 1);
      const std::byte* got = plane.recv.data() + lane + (m % B) * kHtSlotBytes;
      uint64_t stamp = 0;
      for (int i = 0; i < 8; ++i) {
        stamp |= uint64_t(std::to_integer<uint8_t>(got[i])) << (8 * i);
      }
      if (stamp != uint64_t{m} + 1) {
        throw FlowControlViolation("ht: channel " + std::to_string(channel) + " slot " +
                                   std::to_string(m % B) + " holds generation " +
                                   std::to_string(stamp) + ", expected " + std::to_string(m + 1));
      }
      for (uint64_t i = 0; i < kHtPayload; ++i) {
        if (got[8 + i] != ht_byte(channel, m, i, cfg.seed)) {
          throw VerificationFailure("ht: payload mismatch on channel " +
                                    std::to_string(channel) + " message " + std::to_string(m));
        }
      }
      gin.signal(world, pred, head_sig, SignalOp::add(1));
    }

    // Full delivery: every one of this channel's consumes has advanced our
    // head. Each (comm, context) pair hosts exactly one channel, so head,
    // tail, and counter cells are never reused and need no reset.
    gin.wait_signal(head_sig, M);
    gin.flush();
  }
}

HtReport run_moe_ht(const LaunchOptions& opts, const MoeConfig& cfg) {
  if (cfg.mode != MoeMode::HighThroughput) throw UsageError("run_moe_ht: config is not HT mode");
  if (opts.ranks < 2) throw UsageError("moe-ht needs at least 2 ranks");
  if (cfg.slots == 0 || cfg.channels == 0 || cfg.messages == 0) {
    throw UsageError("moe-ht needs slots, channels, and messages");
  }

  const uint32_t n_ctx = opts.config.n_contexts;
  const uint32_t n_comms = (cfg.channels + n_ctx - 1) / n_ctx;
  launch_pool(opts, n_comms,
              [&](std::vector<DevComm*>& comms) { moe_ht_rank_program(comms, cfg); });

  HtReport report;
  report.channels = cfg.channels;
  report.messages_delivered = uint64_t{cfg.channels} * cfg.messages * opts.ranks;
  return report;
}

}  // namespace ginsim
