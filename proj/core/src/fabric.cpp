#include "ginsim/fabric.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ginsim {
namespace {

// splitmix64; decorrelates per-channel RNG streams from the run seed.
uint64_t mix(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

uint64_t channel_stream_seed(uint64_t seed, const ChannelKey& key, bool reverse) {
  uint64_t h = mix(seed ^ 0xC0FFEEull);
  h = mix(h ^ key.src);
  h = mix(h ^ (static_cast<uint64_t>(key.context) << 32));
  h = mix(h ^ key.dst);
  h = mix(h ^ (reverse ? 0x5151ull : 0ull));
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------
// EndpointCore

size_t EndpointCore::release_held(RxChannel& rx, DeliverySink& sink) {
  size_t applied = 0;
  // Held signals release strictly by (watermark, arrival).
  std::sort(rx.held_signals.begin(), rx.held_signals.end(), [](const auto& a, const auto& b) {
    return std::tie(a.watermark, a.arrival) < std::tie(b.watermark, b.arrival);
  });
  size_t i = 0;
  while (i < rx.held_signals.size() && rx.held_signals[i].watermark <= rx.applied_prefix) {
    sink.sink_apply_signal(rx.held_signals[i].body.id, rx.held_signals[i].body.op);
    ++applied;
    ++i;
  }
  rx.held_signals.erase(rx.held_signals.begin(), rx.held_signals.begin() + i);
  return applied;
}

size_t EndpointCore::handle(const FabricMessage& msg, DeliverySink& sink,
                            const std::function<void(const ChannelKey&, uint64_t)>& send_ack) {
  RxChannel& rx = rx_[msg.channel];
  rx.arrivals++;

  if (const auto* put = std::get_if<PutBody>(&msg.body)) {
    // Zero-byte puts exist for sequencing only (release signals, flushes);
    // they touch no window.
    if (!put->payload.empty()) {
      auto bytes = sink.sink_window_bytes(put->dst_window, put->dst_offset, put->payload.size());
      std::copy(put->payload.begin(), put->payload.end(), bytes.begin());
    }
    if (put->seq <= rx.applied_prefix || !rx.out_of_order.insert(put->seq).second) {
      throw Error("duplicate put seq " + std::to_string(put->seq) + " on channel");
    }
    while (!rx.out_of_order.empty() && *rx.out_of_order.begin() == rx.applied_prefix + 1) {
      rx.applied_prefix++;
      rx.out_of_order.erase(rx.out_of_order.begin());
    }
    send_ack(msg.channel, put->seq);
    return 1 + release_held(rx, sink);
  }

  if (const auto* sig = std::get_if<SignalBody>(&msg.body)) {
    if (sig->watermark <= rx.applied_prefix) {
      // Arrival order among already-satisfied signals is their apply order.
      sink.sink_apply_signal(sig->id, sig->op);
      return 1;
    }
    rx.held_signals.push_back({sig->watermark, rx.arrivals, *sig});
    return 0;
  }

  const auto& ack = std::get<AckBody>(msg.body);
  sink.sink_on_ack(msg.channel, ack.ack_seq);
  return 1;
}

// ---------------------------------------------------------------------------
// SimFabric

SimFabric::SimFabric(LatencyModel model) : model_(model) {}
SimFabric::~SimFabric() = default;

SimEndpoint& SimFabric::open_endpoint(RankId self, std::vector<RankId> peers, DeliverySink& sink) {
  std::lock_guard lock(mu_);
  auto [it, inserted] = endpoints_.try_emplace(self);
  if (!inserted && it->second.endpoint) {
    throw DuplicateEndpoint("endpoint for rank " + std::to_string(self) + " already open");
  }
  it->second.endpoint.reset(new SimEndpoint(*this, self, std::move(peers), sink));
  return *it->second.endpoint;
}

uint64_t SimFabric::now() const {
  std::lock_guard lock(mu_);
  return virtual_now_;
}

bool SimFabric::try_advance() {
  std::lock_guard lock(mu_);
  uint64_t earliest = UINT64_MAX;
  for (const auto& [rank, slot] : endpoints_) {
    if (!slot.inbound.empty()) earliest = std::min(earliest, slot.inbound.front().time);
  }
  if (earliest == UINT64_MAX || earliest <= virtual_now_) return false;
  virtual_now_ = earliest;
  return true;
}

bool SimFabric::has_pending() const {
  std::lock_guard lock(mu_);
  for (const auto& [rank, slot] : endpoints_) {
    if (!slot.inbound.empty()) return true;
  }
  return false;
}

void SimFabric::mark_failed(std::exception_ptr e) {
  std::lock_guard lock(mu_);
  if (!failure_) failure_ = e;
}

void SimFabric::check_failed() const {
  std::lock_guard lock(mu_);
  if (failure_) std::rethrow_exception(failure_);
}

void SimFabric::set_delivery_log_enabled(bool on) {
  std::lock_guard lock(mu_);
  log_deliveries_ = on;
  delivery_log_.clear();
}

std::vector<DeliveryRecord> SimFabric::delivery_log() const {
  std::lock_guard lock(mu_);
  return delivery_log_;
}

void SimFabric::set_tx_log_enabled(bool on) {
  std::lock_guard lock(mu_);
  log_tx_ = on;
  tx_log_.clear();
}

std::vector<TxRecord> SimFabric::tx_log() const {
  std::lock_guard lock(mu_);
  return tx_log_;
}

SimFabric::DirectionState& SimFabric::direction_state(const ChannelKey& key, bool reverse) {
  auto it = directions_.find({key, reverse});
  if (it == directions_.end()) {
    DirectionState state;
    state.rng.seed(channel_stream_seed(model_.seed, key, reverse));
    it = directions_.emplace(std::make_pair(key, reverse), std::move(state)).first;
  }
  return it->second;
}

uint64_t SimFabric::sample_delay(DirectionState& dir, size_t payload_bytes) {
  uint64_t delay = model_.base_delay_ns;
  if (model_.jitter_ns > 0) {
    delay += std::uniform_int_distribution<uint64_t>(0, model_.jitter_ns)(dir.rng);
  }
  if (model_.line_rate_gbps > 0 && payload_bytes > 0) {
    delay += static_cast<uint64_t>(std::llround(static_cast<double>(payload_bytes) /
                                                model_.line_rate_gbps));
  }
  return delay;
}

void SimFabric::enqueue(RankId dst, FabricMessage&& msg, uint64_t delay_source_bytes,
                        bool reverse_dir) {
  DirectionState& dir = direction_state(msg.channel, reverse_dir);
  uint64_t t = virtual_now_ + sample_delay(dir, delay_source_bytes);
  // A message may overtake at most reorder_window predecessors: its delivery
  // time is floored by the message reorder_window+1 sends back.
  if (dir.recent.size() > model_.reorder_window) {
    t = std::max(t, dir.recent.front());
    dir.recent.pop_front();
  }
  dir.recent.push_back(t);

  auto it = endpoints_.find(dst);
  if (it == endpoints_.end()) {
    throw UnknownChannel("no endpoint open for rank " + std::to_string(dst));
  }
  it->second.inbound.push_back(Event{t, next_ticket_++, std::move(msg)});
  std::push_heap(it->second.inbound.begin(), it->second.inbound.end(), std::greater<>{});
}

void SimFabric::record_tx(const ChannelKey& key, char kind, uint64_t seq_or_watermark) {
  if (log_tx_) tx_log_.push_back({key, kind, seq_or_watermark, std::this_thread::get_id()});
}

// ---------------------------------------------------------------------------
// SimEndpoint

void SimEndpoint::check_channel(const ChannelKey& key) const {
  if (key.src != core_.self() ||
      std::find(peers_.begin(), peers_.end(), key.dst) == peers_.end()) {
    throw UnknownChannel("rank " + std::to_string(core_.self()) + " has no channel " +
                         std::to_string(key.src) + "/" + std::to_string(key.context) + "->" +
                         std::to_string(key.dst));
  }
}

uint64_t SimEndpoint::tx_put(const ChannelKey& key, WindowId dst_window, uint64_t dst_offset,
                             std::span<const std::byte> payload) {
  fabric_.check_failed();
  check_channel(key);
  std::lock_guard lock(fabric_.mu_);
  const uint64_t seq = core_.next_put_seq(key);
  FabricMessage msg{key, PutBody{seq, dst_window, dst_offset,
                                 std::vector<std::byte>(payload.begin(), payload.end())}};
  fabric_.record_tx(key, 'P', seq);
  fabric_.enqueue(key.dst, std::move(msg), payload.size(), /*reverse=*/false);
  return seq;
}

uint64_t SimEndpoint::tx_signal(const ChannelKey& key, SignalId id, SignalOp op) {
  fabric_.check_failed();
  check_channel(key);
  std::lock_guard lock(fabric_.mu_);
  const uint64_t watermark = core_.current_watermark(key);
  FabricMessage msg{key, SignalBody{watermark, id, op}};
  fabric_.record_tx(key, 'S', watermark);
  fabric_.enqueue(key.dst, std::move(msg), 0, /*reverse=*/false);
  return watermark;
}

size_t SimEndpoint::rx_progress() {
  fabric_.check_failed();
  // Pop the deliverable batch under the lock, apply outside it so sink work
  // (window copies) does not serialize the whole fabric.
  std::vector<FabricMessage> batch;
  {
    std::lock_guard lock(fabric_.mu_);
    auto& inbound = fabric_.endpoints_.at(core_.self()).inbound;
    while (!inbound.empty() && inbound.front().time <= fabric_.virtual_now_) {
      std::pop_heap(inbound.begin(), inbound.end(), std::greater<>{});
      SimFabric::Event ev = std::move(inbound.back());
      inbound.pop_back();
      if (fabric_.log_deliveries_) {
        char kind = 'P';
        uint64_t sw = 0;
        if (const auto* p = std::get_if<PutBody>(&ev.msg.body)) {
          sw = p->seq;
        } else if (const auto* s = std::get_if<SignalBody>(&ev.msg.body)) {
          kind = 'S';
          sw = s->watermark;
        } else {
          kind = 'A';
          sw = std::get<AckBody>(ev.msg.body).ack_seq;
        }
        fabric_.delivery_log_.push_back({ev.time, ev.msg.channel, kind, sw});
      }
      batch.push_back(std::move(ev.msg));
    }
  }

  size_t applied = 0;
  try {
    for (const FabricMessage& msg : batch) {
      applied += core_.handle(msg, sink_, [this](const ChannelKey& ch, uint64_t seq) {
        std::lock_guard lock(fabric_.mu_);
        fabric_.enqueue(ch.src, FabricMessage{ch, AckBody{seq}}, 0, /*reverse=*/true);
      });
    }
  } catch (...) {
    fabric_.mark_failed(std::current_exception());
    throw;
  }
  return applied;
}

bool SimEndpoint::has_pending() const {
  std::lock_guard lock(fabric_.mu_);
  return !fabric_.endpoints_.at(core_.self()).inbound.empty();
}

}  // namespace ginsim
