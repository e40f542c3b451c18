#include "ginsim/runtime.hpp"

#include <algorithm>
#include <chrono>
#include <utility>
#include <cstdlib>
#include <string>

namespace ginsim {

using namespace std::chrono;
using namespace std::chrono_literals;

const char* to_string(TransportKind k) { return k == TransportKind::Inproc ? "inproc" : "socket"; }

bool operator==(const Config& a, const Config& b) {
  return a.n_contexts == b.n_contexts && a.backend == b.backend &&
         a.signal_cells == b.signal_cells && a.counter_cells == b.counter_cells &&
         a.queue_depth == b.queue_depth && a.timeout_ms == b.timeout_ms &&
         a.latency.base_delay_ns == b.latency.base_delay_ns &&
         a.latency.jitter_ns == b.latency.jitter_ns &&
         a.latency.reorder_window == b.latency.reorder_window &&
         a.latency.seed == b.latency.seed &&
         a.latency.line_rate_gbps == b.latency.line_rate_gbps && a.progress == b.progress;
}

namespace {

std::optional<uint64_t> env_u64(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  char* end = nullptr;
  const uint64_t parsed = std::strtoull(v, &end, 0);
  if (end == v || *end != '\0') {
    throw UsageError(std::string(name) + ": cannot parse '" + v + "' as an integer");
  }
  return parsed;
}

}  // namespace

Config config_from_env(Config base) {
  if (const char* b = std::getenv("GINSIM_BACKEND"); b && *b) {
    const std::string s(b);
    if (s == "direct") {
      base.backend = BackendKind::Direct;
    } else if (s == "proxy") {
      base.backend = BackendKind::Proxy;
    } else {
      throw UsageError("GINSIM_BACKEND must be 'direct' or 'proxy', got '" + s + "'");
    }
  }
  if (auto v = env_u64("GINSIM_SEED")) base.latency.seed = *v;
  if (auto v = env_u64("GINSIM_LATENCY_NS")) base.latency.base_delay_ns = *v;
  if (auto v = env_u64("GINSIM_JITTER_NS")) base.latency.jitter_ns = *v;
  if (auto v = env_u64("GINSIM_REORDER")) base.latency.reorder_window = static_cast<uint32_t>(*v);
  if (auto v = env_u64("GINSIM_QUEUE_DEPTH")) base.queue_depth = static_cast<uint32_t>(*v);
  if (auto v = env_u64("GINSIM_TIMEOUT_MS")) base.timeout_ms = *v;
  return base;
}

// ---------------------------------------------------------------------------
// InProcGroup

InProcGroup::InProcGroup(uint32_t world_size)
    : world_size_(world_size), comms_(world_size, nullptr), next_window_(world_size, 0) {
  if (world_size == 0) throw UsageError("world size must be positive");
}

InProcGroup::~InProcGroup() = default;

std::shared_ptr<InProcGroup> InProcGroup::create(uint32_t world_size) {
  return std::shared_ptr<InProcGroup>(new InProcGroup(world_size));
}

SimFabric* InProcGroup::fabric() {
  std::lock_guard lock(mu_);
  return fabric_.get();
}

const SimFabric* InProcGroup::fabric() const {
  std::lock_guard lock(mu_);
  return fabric_.get();
}

void InProcGroup::attach(RankId rank, DevComm* comm, const Config& config) {
  std::lock_guard lock(mu_);
  if (rank >= world_size_) {
    throw UsageError("rank " + std::to_string(rank) + " outside world of " +
                     std::to_string(world_size_));
  }
  if (comms_[rank]) {
    throw DuplicateEndpoint("rank " + std::to_string(rank) + " already initialized");
  }
  if (!config_) {
    config_ = config;
    fabric_ = std::make_unique<SimFabric>(config.latency);
  } else if (!(*config_ == config)) {
    throw ConfigMismatch("rank " + std::to_string(rank) +
                         " passed a configuration differing from rank of first arrival");
  }
  comms_[rank] = comm;
  attached_++;
  cv_.notify_all();
}

void InProcGroup::detach(RankId rank) {
  std::lock_guard lock(mu_);
  comms_[rank] = nullptr;
}

void InProcGroup::mark_ready() {
  std::lock_guard lock(mu_);
  ready_++;
  cv_.notify_all();
}

void InProcGroup::await_all_ready(const Config& config) {
  if (config.progress == ProgressMode::Manual) return;
  std::unique_lock lock(mu_);
  if (!cv_.wait_for(lock, milliseconds(config.timeout_ms),
                    [&] { return ready_ == world_size_; })) {
    throw BootstrapTimeout("comm_init: only " + std::to_string(ready_) + " of " +
                           std::to_string(world_size_) + " ranks arrived");
  }
}

WindowId InProcGroup::register_window(RankId rank, uint64_t size) {
  std::unique_lock lock(mu_);
  const uint32_t idx = next_window_[rank]++;
  if (window_regs_.size() <= idx) {
    window_regs_.resize(idx + 1);
  }
  WindowReg& reg = window_regs_[idx];
  if (reg.sizes.empty()) {
    reg.sizes.assign(world_size_, 0);
    reg.present.assign(world_size_, 0);
  }
  reg.sizes[rank] = size;
  reg.present[rank] = 1;
  reg.count++;

  if (reg.count == world_size_) {
    auto sizes = reg.sizes;
    auto targets = comms_;
    // The last registrant finalizes the window on every rank. complete flips
    // only afterwards: a waiter waking on it must find its Window usable.
    lock.unlock();
    for (DevComm* c : targets) {
      if (c) c->finalize_window(idx, sizes);
    }
    lock.lock();
    reg.complete = true;
    cv_.notify_all();
  }
  return idx;
}

void InProcGroup::await_window_complete(WindowId id, RankId rank, uint64_t timeout_ms) {
  std::unique_lock lock(mu_);
  if (config_ && config_->progress == ProgressMode::Manual) return;
  if (!cv_.wait_for(lock, milliseconds(timeout_ms),
                    [&] { return window_regs_[id].complete; })) {
    uint32_t mine = next_window_[rank];
    for (RankId r = 0; r < world_size_; ++r) {
      if (next_window_[r] != mine) {
        throw RegistrationMismatch("window_register call counts differ: rank " +
                                   std::to_string(rank) + " at " + std::to_string(mine) +
                                   ", rank " + std::to_string(r) + " at " +
                                   std::to_string(next_window_[r]));
      }
    }
    throw BootstrapTimeout("window " + std::to_string(id) + " never completed registration");
  }
}

size_t InProcGroup::pump_all() {
  std::vector<DevComm*> targets;
  {
    std::lock_guard lock(mu_);
    targets = comms_;
  }
  size_t moved = 0;
  for (DevComm* c : targets) {
    if (c) moved += c->pump_local();
  }
  if (moved == 0) {
    SimFabric* f = fabric();
    if (f && f->try_advance()) moved = 1;
  }
  return moved;
}

// ---------------------------------------------------------------------------
// DevComm

DevComm::DevComm(RankId rank, uint32_t world_size, Config config)
    : rank_(rank), world_size_(world_size), config_(std::move(config)),
      world_team_(Team::world(world_size)) {
  if (config_.signal_cells < kBarrierSlots * kBarrierSteps) {
    throw UsageError("signal table smaller than the reserved barrier region");
  }
  backend_ = config_.backend.value_or(BackendKind::Direct);
  teams_.emplace(world_team_.id, world_team_);
  signals_ = std::make_unique<std::atomic<uint64_t>[]>(config_.signal_cells);
  counters_ = std::make_unique<std::atomic<uint64_t>[]>(config_.counter_cells);
  counter_pending_ = std::make_unique<std::atomic<uint32_t>[]>(config_.counter_cells);
  for (uint32_t i = 0; i < config_.signal_cells; ++i) signals_[i].store(0);
  for (uint32_t i = 0; i < config_.counter_cells; ++i) {
    counters_[i].store(0);
    counter_pending_[i].store(0);
  }
}

DevComm::~DevComm() {
  stop_progress_thread();
  if (group_) group_->detach(rank_);
}

void DevComm::start_progress_thread() {
  if (config_.progress != ProgressMode::Threaded) return;
  progress_thread_ = std::thread([this] { progress_main(); });
}

void DevComm::stop_progress_thread() {
  stop_.store(true, std::memory_order_release);
  if (progress_thread_.joinable()) progress_thread_.join();
}

void DevComm::progress_main() {
  uint32_t idle = 0;
  while (!stop_.load(std::memory_order_acquire)) {
    size_t moved = 0;
    try {
      moved = pump_local();
      if (moved == 0 && advance_time()) moved = 1;
    } catch (...) {
      set_failure(std::current_exception());
      return;
    }
    if (moved > 0) {
      idle = 0;
      continue;
    }
    // Cooperative idling: yield first so peers run, ease off if nothing keeps
    // arriving.
    if (++idle < 256) {
      std::this_thread::yield();
    } else {
      std::this_thread::sleep_for(50us);
    }
  }
}

size_t DevComm::pump_local() {
  check_failed();
  size_t n = transport_->rx_progress();
  if (proxy_) {
    n += proxy_->progress_once();
  } else {
    for (DirectContext* d : direct_ctx_) n += d->poll();
  }
  return n;
}

bool DevComm::advance_time() {
  if (!group_) return false;
  SimFabric* f = group_->fabric();
  return f && f->try_advance();
}

uint64_t DevComm::virtual_now() const {
  if (group_) {
    const SimFabric* f = std::as_const(*group_).fabric();
    if (f) return f->now();
  }
  return 0;
}

void DevComm::set_failure(std::exception_ptr e) {
  std::lock_guard lock(fail_mu_);
  if (!failure_) failure_ = e;
}

void DevComm::check_failed() const {
  {
    std::lock_guard lock(fail_mu_);
    if (failure_) std::rethrow_exception(failure_);
  }
  if (group_) {
    const SimFabric* f = std::as_const(*group_).fabric();
    if (f) f->check_failed();
  }
}

void DevComm::wait_until(const std::function<bool()>& pred, const char* what) {
  const auto deadline = steady_clock::now() + milliseconds(config_.timeout_ms);
  if (config_.progress == ProgressMode::Manual && group_) {
    while (!pred()) {
      check_failed();
      if (group_->pump_all() == 0) {
        if (pred()) return;
        throw Timeout(std::string(what) + ": no pending work anywhere (deadlock)");
      }
      if (steady_clock::now() > deadline) {
        throw Timeout(std::string(what) + ": exceeded " + std::to_string(config_.timeout_ms) +
                      " ms");
      }
    }
    return;
  }
  uint32_t idle = 0;
  while (!pred()) {
    check_failed();
    if (steady_clock::now() > deadline) {
      throw Timeout(std::string(what) + ": exceeded " + std::to_string(config_.timeout_ms) +
                    " ms");
    }
    if (++idle < 128) {
      std::this_thread::yield();
    } else {
      std::this_thread::sleep_for(100us);
    }
  }
}

// --- teams ---

const Team& DevComm::register_team(Team team) {
  if (team.members.empty()) throw UsageError("team must have members");
  for (RankId r : team.members) {
    if (r >= world_size_) throw InvalidPeer("team member " + std::to_string(r) + " out of world");
  }
  auto [it, inserted] = teams_.emplace(team.id, std::move(team));
  if (!inserted) throw UsageError("team id already registered");
  return it->second;
}

const Team& DevComm::team(TeamId id) const {
  auto it = teams_.find(id);
  if (it == teams_.end()) throw UsageError("team " + std::to_string(id) + " not registered");
  return it->second;
}

// --- windows ---

Window& DevComm::window_register(std::span<std::byte> local) {
  check_failed();
  WindowId id;
  {
    std::lock_guard lock(win_mu_);
    id = static_cast<WindowId>(windows_.size());
    windows_.push_back(Window::pending(id, rank_, local));
    window_buffers_.push_back(local);
  }
  if (transport_kind_ == TransportKind::Inproc) {
    const WindowId group_id = group_->register_window(rank_, local.size());
    if (group_id != id) {
      throw RegistrationMismatch("window id skew: local " + std::to_string(id) + " vs group " +
                                 std::to_string(group_id));
    }
    group_->await_window_complete(id, rank_, config_.timeout_ms);
  } else {
    finalize_window(id, socket_gather_window_sizes(local.size()));
    // No rank may leave the collective (and start putting into this window)
    // until every rank has finalized its local object.
    socket_control_barrier();
  }
  std::lock_guard lock(win_mu_);
  return windows_[id];
}

void DevComm::finalize_window(WindowId id, std::vector<uint64_t> sizes) {
  {
    std::lock_guard lock(win_mu_);
    if (windows_[id].complete()) return;
    windows_[id] = Window(id, rank_, std::move(sizes), window_buffers_[id]);
  }
  plugin_->reg_mr(id);
}

Window& DevComm::lookup_window(WindowId id) {
  std::lock_guard lock(win_mu_);
  if (id >= windows_.size()) {
    throw UnknownWindow("window " + std::to_string(id) + " was never registered");
  }
  if (!windows_[id].complete()) {
    throw UnknownWindow("window " + std::to_string(id) + " not fully registered yet");
  }
  return windows_[id];
}

// --- cells ---

namespace {
void check_cell(uint32_t id, uint32_t limit, const char* kind) {
  if (id >= limit) {
    if (kind[0] == 's') throw InvalidSignal("signal " + std::to_string(id) + " out of range");
    throw InvalidCounter("counter " + std::to_string(id) + " out of range");
  }
}
}  // namespace

uint64_t DevComm::read_signal(SignalId id) const {
  check_cell(id, config_.signal_cells, "signal");
  return signals_[id].load(std::memory_order_acquire);
}

void DevComm::wait_signal(SignalId id, uint64_t expected) {
  check_cell(id, config_.signal_cells, "signal");
  wait_until([&] { return signals_[id].load(std::memory_order_acquire) >= expected; },
             "wait_signal");
}

void DevComm::reset_signal(SignalId id) {
  check_cell(id, config_.signal_cells, "signal");
  signals_[id].store(0, std::memory_order_release);
}

uint64_t DevComm::read_counter(CounterId id) const {
  check_cell(id, config_.counter_cells, "counter");
  return counters_[id].load(std::memory_order_acquire);
}

void DevComm::wait_counter(CounterId id, uint64_t expected) {
  check_cell(id, config_.counter_cells, "counter");
  wait_until([&] { return counters_[id].load(std::memory_order_acquire) >= expected; },
             "wait_counter");
}

void DevComm::reset_counter(CounterId id) {
  check_cell(id, config_.counter_cells, "counter");
  if (counter_pending_[id].load(std::memory_order_acquire) != 0) {
    throw ResetWhileOutstanding("counter " + std::to_string(id) +
                                " still has operations in flight");
  }
  counters_[id].store(0, std::memory_order_release);
}

void DevComm::bump_counter(CounterId id) {
  counters_[id].fetch_add(1, std::memory_order_acq_rel);
  counter_pending_[id].fetch_sub(1, std::memory_order_acq_rel);
}

DevComm::CellSnapshot DevComm::snapshot_cells() const {
  CellSnapshot s;
  s.signals.reserve(config_.signal_cells);
  s.counters.reserve(config_.counter_cells);
  for (uint32_t i = 0; i < config_.signal_cells; ++i) {
    s.signals.push_back(signals_[i].load(std::memory_order_acquire));
  }
  for (uint32_t i = 0; i < config_.counter_cells; ++i) {
    s.counters.push_back(counters_[i].load(std::memory_order_acquire));
  }
  return s;
}

// --- flush ---

void DevComm::flush(ContextId ctx) {
  check_failed();
  if (ctx >= config_.n_contexts) throw InvalidContext("flush: context out of range");
  if (proxy_) {
    const uint64_t snapshot = proxy_->flush_snapshot(ctx);
    wait_until([&] { return proxy_->flush_satisfied(ctx, snapshot); }, "flush");
  } else {
    DirectContext* d = direct_ctx_[ctx];
    wait_until([&] { return d->outstanding() == 0; }, "flush");
  }
}

// --- submission ---

void DevComm::submit_op(ContextId ctx, const Team& team, uint32_t peer_team_rank, Opcode opcode,
                        WindowId dst_window, uint64_t dst_offset, WindowId src_window,
                        uint64_t src_offset_or_value, uint64_t bytes,
                        const CompletionAction& action) {
  check_failed();
  if (ctx >= config_.n_contexts) throw InvalidContext("context out of range");
  {
    auto it = teams_.find(team.id);
    if (it == teams_.end() || it->second.members != team.members) {
      throw UsageError("team " + std::to_string(team.id) + " not registered with this comm");
    }
  }
  if (peer_team_rank >= team.size()) {
    throw InvalidPeer("peer " + std::to_string(peer_team_rank) + " outside team of " +
                      std::to_string(team.size()));
  }
  const RankId peer_world = team.members[peer_team_rank];
  if (peer_world >= world_size_) {
    throw InvalidPeer("team member " + std::to_string(peer_world) + " outside world");
  }

  if (opcode != Opcode::SignalOnly) {
    Window& dst = lookup_window(dst_window);
    dst.check_range(peer_world, dst_offset, bytes);
    if (opcode == Opcode::Put) {
      Window& src = lookup_window(src_window);
      src.check_range(rank_, src_offset_or_value, bytes);
    } else if (bytes > kMaxInlineBytes) {
      throw InvalidDescriptor("inline payload over 8 bytes");
    }
  }
  if (action.remote_signal) check_cell(action.remote_signal->id, config_.signal_cells, "signal");
  if (action.local_counter) {
    check_cell(*action.local_counter, config_.counter_cells, "counter");
    counter_pending_[*action.local_counter].fetch_add(1, std::memory_order_acq_rel);
  }

  if (proxy_) {
    Descriptor d;
    switch (opcode) {
      case Opcode::Put:
        d = make_put_descriptor(team.id, peer_team_rank, dst_window, dst_offset, src_window,
                                src_offset_or_value, bytes, action);
        break;
      case Opcode::PutInline:
        d = make_put_inline_descriptor(team.id, peer_team_rank, dst_window, dst_offset,
                                       src_offset_or_value, bytes, action);
        break;
      case Opcode::SignalOnly: {
        if (!action.remote_signal) throw InvalidDescriptor("signal op without a signal");
        CompletionAction rest;
        rest.local_counter = action.local_counter;
        d = make_signal_descriptor(team.id, peer_team_rank, action.remote_signal->id,
                                   action.remote_signal->op, rest);
        break;
      }
    }
    proxy_->submit(ctx, d);
  } else {
    ResolvedOp op;
    op.opcode = opcode;
    op.peer = peer_world;
    op.dst_window = dst_window;
    op.dst_offset = dst_offset;
    op.src_window = src_window;
    op.src_offset_or_value = src_offset_or_value;
    op.bytes = bytes;
    op.action = action;
    direct_ctx_[ctx]->post(op);
  }
}

// --- DeliverySink ---

std::span<std::byte> DevComm::sink_window_bytes(WindowId w, uint64_t offset, uint64_t len) {
  return lookup_window(w).local_bytes(offset, len);
}

void DevComm::sink_apply_signal(SignalId id, const SignalOp& op) {
  if (id >= config_.signal_cells) {
    throw InvalidSignal("delivered signal " + std::to_string(id) + " out of range");
  }
  signals_[id].fetch_add(op.amount(), std::memory_order_acq_rel);
}

void DevComm::sink_on_ack(const ChannelKey& channel, uint64_t seq) {
  plugin_->on_ack(channel, seq);
}

// ---------------------------------------------------------------------------
// comm_init

void DevComm::init_backend() {
  plugin_ = std::make_unique<FabricPlugin>(backend_, *transport_, *this, config_.n_contexts,
                                           [this](CounterId id) { bump_counter(id); });
  if (backend_ == BackendKind::Proxy) {
    ProxyBackend::Hooks hooks;
    hooks.resolve_peer = [this](TeamId t, uint32_t r) { return team_translate(team(t), r); };
    hooks.bump_counter = [this](CounterId id) { bump_counter(id); };
    proxy_ = std::make_unique<ProxyBackend>(*plugin_, config_.n_contexts, config_.queue_depth,
                                            std::move(hooks));
  } else {
    for (uint32_t i = 0; i < config_.n_contexts; ++i) {
      direct_ctx_.push_back(&plugin_->create_context(static_cast<ContextId>(i)));
    }
  }
}

std::unique_ptr<DevComm> comm_init(std::shared_ptr<InProcGroup> group, RankId self,
                                   const Config& config) {
  if (!group) throw UsageError("comm_init requires a group");
  std::unique_ptr<DevComm> comm(new DevComm(self, group->world_size(), config));
  comm->transport_kind_ = TransportKind::Inproc;
  comm->group_ = group;
  group->attach(self, comm.get(), config);

  std::vector<RankId> peers(group->world_size());
  for (RankId r = 0; r < group->world_size(); ++r) peers[r] = r;
  comm->transport_ = &group->fabric()->open_endpoint(self, std::move(peers), *comm);

  comm->init_backend();
  comm->start_progress_thread();
  group->mark_ready();
  group->await_all_ready(config);
  return comm;
}

// ---------------------------------------------------------------------------
// Gin

Gin::Gin(DevComm& comm, ContextId context_index) : comm_(comm), ctx_(context_index) {
  if (context_index >= comm.config().n_contexts) {
    throw InvalidContext("context " + std::to_string(context_index) + " out of range (" +
                         std::to_string(comm.config().n_contexts) + " configured)");
  }
}

void Gin::put(const Team& team, uint32_t peer, const Window& dst_window, uint64_t dst_offset,
              const Window& src_window, uint64_t src_offset, uint64_t bytes,
              const CompletionAction& action) {
  comm_.submit_op(ctx_, team, peer, Opcode::Put, dst_window.id(), dst_offset, src_window.id(),
                  src_offset, bytes, action);
}

void Gin::put_value_raw(const Team& team, uint32_t peer, const Window& dst_window,
                        uint64_t dst_offset, uint64_t le_value, uint32_t width,
                        const CompletionAction& action) {
  if (width == 0 || width > kMaxInlineBytes) {
    throw InvalidDescriptor("put_value width must be 1..8 bytes");
  }
  comm_.submit_op(ctx_, team, peer, Opcode::PutInline, dst_window.id(), dst_offset, kInlineWindow,
                  le_value, width, action);
}

void Gin::signal(const Team& team, uint32_t peer, SignalId id, SignalOp op,
                 const CompletionAction& action) {
  CompletionAction merged = action;
  merged.remote_signal = CompletionAction::RemoteSignal{id, op};
  comm_.submit_op(ctx_, team, peer, Opcode::SignalOnly, 0, 0, kInlineWindow, 0, 0, merged);
}

// ---------------------------------------------------------------------------
// BarrierSession

BarrierSession::BarrierSession(Gin& gin, Team team, uint32_t slot)
    : gin_(gin), team_(std::move(team)), slot_(slot) {
  if (slot >= kBarrierSlots) {
    throw UsageError("barrier slot " + std::to_string(slot) + " out of range");
  }
  const RankId self = gin_.comm().rank();
  auto it = std::find(team_.members.begin(), team_.members.end(), self);
  if (it == team_.members.end()) {
    throw InvalidPeer("rank " + std::to_string(self) + " is not a member of the barrier team");
  }
  my_index_ = static_cast<uint32_t>(it - team_.members.begin());
}

void BarrierSession::sync() {
  round_++;
  const uint32_t n = team_.size();
  if (n <= 1) return;
  uint32_t steps = 0;
  while ((1u << steps) < n) steps++;
  if (steps > kBarrierSteps) throw UsageError("team too large for the barrier signal region");

  const uint32_t base =
      gin_.comm().config().signal_cells - kBarrierSlots * kBarrierSteps + slot_ * kBarrierSteps;
  for (uint32_t k = 0; k < steps; ++k) {
    const uint32_t dst = (my_index_ + (1u << k)) % n;
    gin_.signal(team_, dst, base + k, SignalOp::inc());
    gin_.wait_signal(base + k, round_);
  }
}

}  // namespace ginsim
