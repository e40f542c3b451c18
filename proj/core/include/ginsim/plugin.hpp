#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <vector>

#include "ginsim/fabric.hpp"
#include "ginsim/types.hpp"

namespace ginsim {

enum class BackendKind { Direct, Proxy };

const char* to_string(BackendKind k);

// Rank-local lookup of registered windows, provided by the runtime.
class WindowTable {
 public:
  virtual ~WindowTable() = default;
  virtual Window& lookup_window(WindowId id) = 0;  // throws UnknownWindow
};

// Registration token for one (window, backend) pair.
struct MrHandle {
  WindowId window = 0;

  friend bool operator==(const MrHandle&, const MrHandle&) = default;
};

// Opaque id mapping to (channel, seq, completion action); unique until retired.
using RequestId = uint64_t;

// Source of a posted put: a registered window range, or a small value carried
// in the descriptor itself.
struct PutSource {
  MrHandle mr;
  uint64_t offset = 0;
  std::optional<uint64_t> inline_value;

  static PutSource window(MrHandle mr, uint64_t offset) { return {mr, offset, std::nullopt}; }
  static PutSource inline_bytes(uint64_t value) { return {{}, 0, value}; }
};

class DirectContext;

// For tests: the posting trace through the plugin boundary.
struct PluginCall {
  char op = '?';  // 'p' iput, 's' iput_signal
  ContextId ctx = 0;
  RankId peer = 0;
  uint64_t bytes = 0;
  std::thread::id issuer;
};

// The backend boundary. Under proxy semantics the runtime owns queuing and the
// progress agent, and this plugin supplies the host-side data path: reg_mr,
// iput, iput_signal, test. Under direct semantics the plugin owns posting: it
// hands out DirectContext objects that submitters drive inline.
class FabricPlugin {
 public:
  FabricPlugin(BackendKind semantics, Transport& transport, WindowTable& windows,
               uint32_t n_contexts, std::function<void(CounterId)> bump_counter);
  ~FabricPlugin();

  FabricPlugin(const FabricPlugin&) = delete;
  FabricPlugin& operator=(const FabricPlugin&) = delete;

  BackendKind semantics() const { return semantics_; }

  // --- shared ---

  // Idempotent; returns the same handle for a window registered twice.
  MrHandle reg_mr(WindowId id);
  bool is_registered(WindowId id) const;

  // Routes transport acks to whichever side posted the put.
  void on_ack(const ChannelKey& channel, uint64_t seq);

  // --- proxy semantics (host data path; single progress agent) ---

  RequestId iput(const PutSource& src, MrHandle dst, uint64_t dst_offset, uint64_t bytes,
                 RankId peer, ContextId ctx, const CompletionAction& action);
  RequestId iput_signal(const PutSource& src, MrHandle dst, uint64_t dst_offset, uint64_t bytes,
                        RankId peer, ContextId ctx, SignalId signal, SignalOp op,
                        const CompletionAction& action);

  // True iff the ack for the request's put has arrived; idempotent once true.
  bool test(RequestId id) const;

  // Releases a completed request and returns its completion action.
  // UnknownHandle when the id was never issued or already retired.
  CompletionAction retire(RequestId id);

  size_t outstanding_requests() const;

  // --- direct semantics ---

  // Returns the posting object bound to (rank, ctx). BackendMismatch under
  // proxy semantics; InvalidContext when ctx is out of range.
  DirectContext& create_context(ContextId ctx);

  void set_call_log_enabled(bool on);
  std::vector<PluginCall> call_log() const;

 private:
  friend class DirectContext;

  // Validates ranges, snapshots the source, and issues the put (with optional
  // trailing signal on the same channel). Returns the put's seq.
  uint64_t post(const PutSource& src, WindowId dst_window, uint64_t dst_offset, uint64_t bytes,
                RankId peer, ContextId ctx, const std::optional<std::pair<SignalId, SignalOp>>& sig);
  RequestId track_request(const ChannelKey& key, uint64_t seq, const CompletionAction& action);
  void require_mr(WindowId id, const char* role) const;
  void require_semantics(BackendKind k, const char* op) const;
  void record_call(char op, ContextId ctx, RankId peer, uint64_t bytes);

  struct Request {
    ChannelKey channel;
    uint64_t seq = 0;
    CompletionAction action;
    bool done = false;
  };

  BackendKind semantics_;
  Transport& transport_;
  WindowTable& windows_;
  uint32_t n_contexts_;
  std::function<void(CounterId)> bump_counter_;

  mutable std::mutex mu_;
  std::map<WindowId, MrHandle> mrs_;
  std::map<RequestId, Request> requests_;
  std::map<std::pair<ChannelKey, uint64_t>, RequestId> by_seq_;
  std::set<std::pair<ChannelKey, uint64_t>> early_acks_;  // acked before tracked
  RequestId next_request_ = 1;
  std::vector<std::unique_ptr<DirectContext>> direct_contexts_;
  bool log_calls_ = false;
  std::vector<PluginCall> calls_;
};

}  // namespace ginsim
