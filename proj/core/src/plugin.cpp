#include "ginsim/plugin.hpp"

#include <string>

#include "ginsim/direct_backend.hpp"

namespace ginsim {

const char* to_string(BackendKind k) { return k == BackendKind::Direct ? "direct" : "proxy"; }

FabricPlugin::FabricPlugin(BackendKind semantics, Transport& transport, WindowTable& windows,
                           uint32_t n_contexts, std::function<void(CounterId)> bump_counter)
    : semantics_(semantics), transport_(transport), windows_(windows), n_contexts_(n_contexts),
      bump_counter_(std::move(bump_counter)), direct_contexts_(n_contexts) {}

FabricPlugin::~FabricPlugin() = default;

MrHandle FabricPlugin::reg_mr(WindowId id) {
  windows_.lookup_window(id);  // UnknownWindow if absent
  std::lock_guard lock(mu_);
  auto [it, inserted] = mrs_.try_emplace(id, MrHandle{id});
  return it->second;
}

bool FabricPlugin::is_registered(WindowId id) const {
  std::lock_guard lock(mu_);
  return mrs_.count(id) != 0;
}

void FabricPlugin::require_mr(WindowId id, const char* role) const {
  std::lock_guard lock(mu_);
  if (!mrs_.count(id)) {
    throw UnknownWindow(std::string(role) + " window " + std::to_string(id) +
                        " not registered with backend");
  }
}

void FabricPlugin::require_semantics(BackendKind k, const char* op) const {
  if (semantics_ != k) {
    throw BackendMismatch(std::string(op) + " called on a " + to_string(semantics_) +
                          "-semantics backend");
  }
}

uint64_t FabricPlugin::post(const PutSource& src, WindowId dst_window, uint64_t dst_offset,
                            uint64_t bytes, RankId peer, ContextId ctx,
                            const std::optional<std::pair<SignalId, SignalOp>>& sig) {
  std::vector<std::byte> payload;
  if (bytes > 0) {
    // Snapshot happens here, at posting time; what the source holds now is
    // what travels.
    if (src.inline_value) {
      if (bytes > kMaxInlineBytes) throw InvalidDescriptor("inline payload over 8 bytes");
      payload.resize(static_cast<size_t>(bytes));
      for (size_t i = 0; i < payload.size(); ++i) {
        payload[i] = static_cast<std::byte>((*src.inline_value >> (8 * i)) & 0xFF);
      }
    } else {
      require_mr(src.mr.window, "source");
      require_mr(dst_window, "destination");
      Window& sw = windows_.lookup_window(src.mr.window);
      auto bytes_view = sw.local_bytes(src.offset, bytes);
      payload.assign(bytes_view.begin(), bytes_view.end());
      windows_.lookup_window(dst_window).check_range(peer, dst_offset, bytes);
    }
  }

  const ChannelKey key{transport_.rank(), ctx, peer};
  const uint64_t seq = transport_.tx_put(key, dst_window, dst_offset, payload);
  if (sig) transport_.tx_signal(key, sig->first, sig->second);
  return seq;
}

RequestId FabricPlugin::track_request(const ChannelKey& key, uint64_t seq,
                                      const CompletionAction& action) {
  std::lock_guard lock(mu_);
  const RequestId id = next_request_++;
  // The ack may already have arrived between posting and tracking.
  const bool done = early_acks_.erase({key, seq}) > 0;
  requests_.emplace(id, Request{key, seq, action, done});
  if (!done) by_seq_.emplace(std::make_pair(key, seq), id);
  return id;
}

RequestId FabricPlugin::iput(const PutSource& src, MrHandle dst, uint64_t dst_offset,
                             uint64_t bytes, RankId peer, ContextId ctx,
                             const CompletionAction& action) {
  require_semantics(BackendKind::Proxy, "iput");
  if (action.remote_signal) {
    throw Error("iput does not carry a remote signal; use iput_signal");
  }
  record_call('p', ctx, peer, bytes);
  const uint64_t seq = post(src, dst.window, dst_offset, bytes, peer, ctx, std::nullopt);
  return track_request({transport_.rank(), ctx, peer}, seq, action);
}

RequestId FabricPlugin::iput_signal(const PutSource& src, MrHandle dst, uint64_t dst_offset,
                                    uint64_t bytes, RankId peer, ContextId ctx, SignalId signal,
                                    SignalOp op, const CompletionAction& action) {
  require_semantics(BackendKind::Proxy, "iput_signal");
  record_call('s', ctx, peer, bytes);
  const uint64_t seq =
      post(src, dst.window, dst_offset, bytes, peer, ctx, std::make_pair(signal, op));
  return track_request({transport_.rank(), ctx, peer}, seq, action);
}

bool FabricPlugin::test(RequestId id) const {
  std::lock_guard lock(mu_);
  auto it = requests_.find(id);
  if (it == requests_.end()) {
    throw UnknownHandle("request " + std::to_string(id) + " unknown or retired");
  }
  return it->second.done;
}

CompletionAction FabricPlugin::retire(RequestId id) {
  std::lock_guard lock(mu_);
  auto it = requests_.find(id);
  if (it == requests_.end()) {
    throw UnknownHandle("request " + std::to_string(id) + " unknown or retired");
  }
  if (!it->second.done) {
    throw Error("retiring request " + std::to_string(id) + " before completion");
  }
  CompletionAction action = it->second.action;
  by_seq_.erase({it->second.channel, it->second.seq});
  requests_.erase(it);
  return action;
}

size_t FabricPlugin::outstanding_requests() const {
  std::lock_guard lock(mu_);
  return requests_.size();
}

void FabricPlugin::on_ack(const ChannelKey& channel, uint64_t seq) {
  DirectContext* dctx = nullptr;
  {
    std::lock_guard lock(mu_);
    if (semantics_ == BackendKind::Proxy) {
      auto it = by_seq_.find({channel, seq});
      if (it != by_seq_.end()) {
        requests_[it->second].done = true;
        by_seq_.erase(it);
      } else {
        early_acks_.insert({channel, seq});
      }
      return;
    }
    if (channel.context < direct_contexts_.size()) {
      dctx = direct_contexts_[channel.context].get();
    }
  }
  if (!dctx) {
    throw Error("ack for direct context " + std::to_string(channel.context) +
                " which was never created");
  }
  dctx->note_ack(channel, seq);
}

DirectContext& FabricPlugin::create_context(ContextId ctx) {
  require_semantics(BackendKind::Direct, "create_context");
  if (ctx >= n_contexts_) {
    throw InvalidContext("context " + std::to_string(ctx) + " out of range (" +
                         std::to_string(n_contexts_) + " configured)");
  }
  std::lock_guard lock(mu_);
  if (!direct_contexts_[ctx]) {
    direct_contexts_[ctx] = std::make_unique<DirectContext>(*this, ctx);
  }
  return *direct_contexts_[ctx];
}

void FabricPlugin::set_call_log_enabled(bool on) {
  std::lock_guard lock(mu_);
  log_calls_ = on;
  calls_.clear();
}

std::vector<PluginCall> FabricPlugin::call_log() const {
  std::lock_guard lock(mu_);
  return calls_;
}

void FabricPlugin::record_call(char op, ContextId ctx, RankId peer, uint64_t bytes) {
  std::lock_guard lock(mu_);
  if (log_calls_) calls_.push_back({op, ctx, peer, bytes, std::this_thread::get_id()});
}

}  // namespace ginsim
