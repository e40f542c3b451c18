#include "ginsim/socket_transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstring>

#include "json.hpp"

#include "ginsim/runtime.hpp"

namespace ginsim {

using json = nlohmann::json;
using namespace std::chrono;
using namespace std::chrono_literals;

namespace {

struct Deadline {
  steady_clock::time_point at;
  explicit Deadline(uint64_t ms) : at(steady_clock::now() + milliseconds(ms)) {}
  bool passed() const { return steady_clock::now() > at; }
};

int make_listener(const std::string& host, uint16_t port, uint16_t* bound_port) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw Error("socket() failed: " + std::string(strerror(errno)));
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw Error("bad listen address " + host);
  }
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd);
    throw Error("bind(" + host + ":" + std::to_string(port) +
                ") failed: " + std::string(strerror(errno)));
  }
  if (::listen(fd, 256) != 0) {
    ::close(fd);
    throw Error("listen failed: " + std::string(strerror(errno)));
  }
  if (bound_port) {
    sockaddr_in actual{};
    socklen_t len = sizeof(actual);
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&actual), &len);
    *bound_port = ntohs(actual.sin_port);
  }
  return fd;
}

// Dials with retries until the peer's listener is up or the deadline passes.
int dial(const std::string& host, uint16_t port, const Deadline& deadline) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    throw Error("bad dial address " + host);
  }
  for (;;) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw Error("socket() failed: " + std::string(strerror(errno)));
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0) {
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      return fd;
    }
    ::close(fd);
    if (deadline.passed()) {
      throw BootstrapTimeout("could not reach " + host + ":" + std::to_string(port));
    }
    std::this_thread::sleep_for(2ms);
  }
}

void set_nonblocking(int fd) {
  // All steady-state IO is poll-driven.
  int flags = ::fcntl(fd, F_GETFL, 0);
  ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

void send_all_blocking(int fd, std::span<const std::byte> bytes, const Deadline& deadline,
                       const std::atomic<bool>* stop) {
  size_t off = 0;
  while (off < bytes.size()) {
    const ssize_t n = ::send(fd, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
    if (n > 0) {
      off += static_cast<size_t>(n);
      continue;
    }
    if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
      if (deadline.passed()) throw BootstrapTimeout("send stalled");
      if (stop && stop->load(std::memory_order_acquire)) throw Error("transport stopping");
      pollfd p{fd, POLLOUT, 0};
      ::poll(&p, 1, 20);
      continue;
    }
    if (n < 0 && errno == EINTR) continue;
    throw Error("send failed: " + std::string(strerror(errno)));
  }
}

// Blocking frame read used during bootstrap and on the control path.
ParsedFrame recv_frame_blocking(int fd, FrameParser& parser, const Deadline& deadline) {
  for (;;) {
    if (auto f = parser.next()) return *f;
    std::byte buf[16384];
    const ssize_t n = ::recv(fd, buf, sizeof(buf), 0);
    if (n > 0) {
      parser.feed({buf, static_cast<size_t>(n)});
      continue;
    }
    if (n == 0) throw Error("connection closed during a blocking read");
    if (errno == EAGAIN || errno == EWOULDBLOCK) {
      if (deadline.passed()) throw BootstrapTimeout("control read timed out");
      pollfd p{fd, POLLIN, 0};
      ::poll(&p, 1, 20);
      continue;
    }
    if (errno == EINTR) continue;
    throw Error("recv failed: " + std::string(strerror(errno)));
  }
}

std::vector<std::byte> to_bytes(const std::string& s) {
  const auto* p = reinterpret_cast<const std::byte*>(s.data());
  return {p, p + s.size()};
}

std::string to_string_view(std::span<const std::byte> b) {
  return {reinterpret_cast<const char*>(b.data()), b.size()};
}

}  // namespace

uint16_t reserve_loopback_port() {
  uint16_t port = 0;
  int fd = make_listener("127.0.0.1", 0, &port);
  ::close(fd);
  return port;
}

// ---------------------------------------------------------------------------
// Bootstrap

SocketTransport::SocketTransport(const Options& opt, DeliverySink& sink)
    : opt_(opt), sink_(sink), core_(opt.self) {
  delay_rng_.seed(opt.latency.seed ^ (0x50CCE7ull + opt.self));
  inbound_.resize(opt.world_size);
  outbound_.resize(opt.world_size);
  try {
    bootstrap();
  } catch (...) {
    stop_.store(true, std::memory_order_release);
    if (control_server_.joinable()) control_server_.join();
    if (control_fd_ >= 0) ::close(control_fd_);
    for (auto& c : inbound_) {
      if (c.open) ::close(c.fd);
    }
    for (auto& c : outbound_) {
      if (c.open) ::close(c.fd);
    }
    throw;
  }
  writer_ = std::thread([this] { writer_main(); });
}

void SocketTransport::bootstrap() {
  const Deadline deadline(opt_.timeout_ms);

  uint16_t data_port = 0;
  int data_listener = make_listener(opt_.host, 0, &data_port);

  if (opt_.self == 0) {
    int rdv = make_listener(opt_.host, opt_.rendezvous_port, nullptr);
    control_server_ = std::thread([this, rdv] { control_server_main(rdv); });
  }

  // Everyone (rank 0 included) joins the rendezvous as a client.
  control_fd_ = dial(opt_.host, opt_.rendezvous_port, deadline);
  set_nonblocking(control_fd_);

  json hello{{"op", "hello"},
             {"rank", opt_.self},
             {"port", data_port},
             {"digest", opt_.config_digest}};
  json reply = json::parse(control_request(hello.dump()));
  std::vector<uint16_t> ports = reply.at("ports").get<std::vector<uint16_t>>();

  // Accept inbound data connections while dialing outbound ones.
  std::exception_ptr accept_error;
  std::thread acceptor([&] {
    try {
      accept_data_connections(data_listener);
    } catch (...) {
      accept_error = std::current_exception();
    }
  });

  try {
    for (RankId dst = 0; dst < opt_.world_size; ++dst) {
      int fd = dial(opt_.host, ports[dst], deadline);
      json id{{"op", "data-hello"}, {"src", opt_.self}};
      const std::string body = id.dump();
      send_all_blocking(fd, encode_control_frame(opt_.self, to_bytes(body)), deadline, nullptr);
      outbound_[dst].fd = fd;
      outbound_[dst].open = true;
    }
  } catch (...) {
    ::shutdown(data_listener, SHUT_RDWR);
    acceptor.join();
    ::close(data_listener);
    throw;
  }
  acceptor.join();
  ::close(data_listener);
  if (accept_error) std::rethrow_exception(accept_error);

  for (auto& c : inbound_) set_nonblocking(c.fd);
  for (auto& c : outbound_) set_nonblocking(c.fd);
}

void SocketTransport::accept_data_connections(int listen_fd) {
  const Deadline deadline(opt_.timeout_ms);
  for (uint32_t got = 0; got < opt_.world_size; ++got) {
    pollfd p{listen_fd, POLLIN, 0};
    while (::poll(&p, 1, 50) == 0) {
      if (stop_.load(std::memory_order_acquire)) throw Error("transport stopping");
      if (deadline.passed()) {
        throw BootstrapTimeout("rank " + std::to_string(opt_.self) + ": only " +
                               std::to_string(got) + " of " + std::to_string(opt_.world_size) +
                               " data connections arrived");
      }
    }
    int fd = ::accept(listen_fd, nullptr, nullptr);
    if (fd < 0) throw Error("accept failed: " + std::string(strerror(errno)));
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    set_nonblocking(fd);
    FrameParser parser;
    ParsedFrame f = recv_frame_blocking(fd, parser, deadline);
    if (f.type != FrameType::Control) throw MalformedFrame("expected data-hello frame");
    const json id = json::parse(to_string_view(f.blob));
    const RankId src = id.at("src").get<RankId>();
    if (src >= opt_.world_size || inbound_[src].open) {
      throw Error("unexpected data connection from rank " + std::to_string(src));
    }
    inbound_[src].fd = fd;
    inbound_[src].parser = std::move(parser);
    inbound_[src].open = true;
  }
}

// Rank 0's rendezvous: collects one request per rank per round, answers all.
// Round 0 is the hello (port map + config digest check); later rounds serve
// window-registration gathers and control barriers.
void SocketTransport::control_server_main(int listen_fd) {
  struct Client {
    int fd = -1;
    FrameParser parser;
    std::optional<json> pending;
    RankId rank = 0;
    bool identified = false;
  };
  std::vector<Client> clients;

  auto fail_all = [&](const std::string& message) {
    json err{{"error", message}};
    for (auto& c : clients) {
      if (c.fd < 0) continue;
      try {
        send_all_blocking(c.fd, encode_control_frame(0, to_bytes(err.dump())),
                          Deadline(1000), &stop_);
      } catch (...) {
      }
    }
  };

  try {
    const Deadline deadline(opt_.timeout_ms);
    while (clients.size() < opt_.world_size) {
      pollfd p{listen_fd, POLLIN, 0};
      if (::poll(&p, 1, 50) == 0) {
        if (stop_.load(std::memory_order_acquire)) {
          ::close(listen_fd);
          return;
        }
        if (deadline.passed()) throw BootstrapTimeout("rendezvous: not all ranks connected");
        continue;
      }
      int fd = ::accept(listen_fd, nullptr, nullptr);
      if (fd < 0) continue;
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      clients.push_back(Client{fd, {}, std::nullopt, 0, false});
    }

    std::string expected_digest;
    std::vector<uint16_t> ports(opt_.world_size, 0);
    bool port_map_done = false;

    // Round loop: gather one request from every rank, then answer everyone.
    for (;;) {
      uint32_t have = 0;
      for (auto& c : clients) have += c.pending.has_value();
      while (have < opt_.world_size) {
        if (stop_.load(std::memory_order_acquire)) {
          for (auto& c : clients) ::close(c.fd);
          ::close(listen_fd);
          return;
        }
        std::vector<pollfd> fds;
        for (auto& c : clients) fds.push_back({c.fd, POLLIN, 0});
        ::poll(fds.data(), fds.size(), 50);
        for (size_t i = 0; i < clients.size(); ++i) {
          if (!(fds[i].revents & (POLLIN | POLLHUP))) continue;
          std::byte buf[16384];
          const ssize_t n = ::recv(clients[i].fd, buf, sizeof(buf), 0);
          if (n == 0) {  // orderly shutdown: the run is over
            for (auto& c : clients) ::close(c.fd);
            ::close(listen_fd);
            return;
          }
          if (n < 0) continue;
          clients[i].parser.feed({buf, static_cast<size_t>(n)});
          while (auto f = clients[i].parser.next()) {
            if (clients[i].pending) throw Error("control client pipelined a request");
            clients[i].pending = json::parse(to_string_view(f->blob));
            ++have;
          }
        }
      }

      const std::string op = clients[0].pending->at("op").get<std::string>();
      json reply;
      bool mismatch = false;
      for (auto& c : clients) {
        if (c.pending->at("op").get<std::string>() != op) mismatch = true;
      }
      if (mismatch) {
        fail_all("ranks issued different collective operations");
        throw Error("collective op mismatch");
      }

      if (op == "hello" && !port_map_done) {
        for (auto& c : clients) {
          c.rank = c.pending->at("rank").get<RankId>();
          c.identified = true;
          ports.at(c.rank) = c.pending->at("port").get<uint16_t>();
          const std::string digest = c.pending->at("digest").get<std::string>();
          if (expected_digest.empty()) expected_digest = digest;
          if (digest != expected_digest) {
            fail_all("config mismatch");
            throw ConfigMismatch("ranks passed different configurations");
          }
        }
        port_map_done = true;
        reply = json{{"ports", ports}};
      } else if (op == "winreg") {
        std::vector<uint64_t> sizes(opt_.world_size, 0);
        for (auto& c : clients) sizes.at(c.rank) = c.pending->at("size").get<uint64_t>();
        reply = json{{"sizes", sizes}};
      } else if (op == "barrier") {
        reply = json{{"ok", 1}};
      } else {
        fail_all("unknown collective " + op);
        throw Error("unknown collective " + op);
      }

      const std::string body = reply.dump();
      for (auto& c : clients) {
        c.pending.reset();
        send_all_blocking(c.fd, encode_control_frame(0, to_bytes(body)),
                          Deadline(opt_.timeout_ms), &stop_);
      }
    }
  } catch (...) {
    for (auto& c : clients) {
      if (c.fd >= 0) ::close(c.fd);
    }
    ::close(listen_fd);
    fail(std::current_exception());
  }
}

std::string SocketTransport::control_request(const std::string& body) {
  std::lock_guard lock(control_mu_);
  const Deadline deadline(opt_.timeout_ms);
  send_all_blocking(control_fd_, encode_control_frame(opt_.self, to_bytes(body)), deadline,
                    &stop_);
  ParsedFrame f = recv_frame_blocking(control_fd_, control_parser_, deadline);
  if (f.type != FrameType::Control) throw MalformedFrame("expected control reply");
  const std::string reply = to_string_view(f.blob);
  const json parsed = json::parse(reply);
  if (parsed.contains("error")) {
    const std::string message = parsed["error"].get<std::string>();
    if (message.find("config") != std::string::npos) throw ConfigMismatch(message);
    throw Error("control plane: " + message);
  }
  return reply;
}

std::vector<uint64_t> SocketTransport::gather_window_sizes(uint64_t my_size) {
  json req{{"op", "winreg"}, {"rank", opt_.self}, {"size", my_size}};
  json reply = json::parse(control_request(req.dump()));
  return reply.at("sizes").get<std::vector<uint64_t>>();
}

void SocketTransport::control_barrier() {
  json req{{"op", "barrier"}, {"rank", opt_.self}};
  control_request(req.dump());
}

// ---------------------------------------------------------------------------
// Teardown

SocketTransport::~SocketTransport() {
  stop_.store(true, std::memory_order_release);
  writer_cv_.notify_all();
  if (writer_.joinable()) writer_.join();
  if (control_fd_ >= 0) ::close(control_fd_);
  if (control_server_.joinable()) control_server_.join();
  for (auto& c : inbound_) {
    if (c.open) ::close(c.fd);
  }
  for (auto& c : outbound_) {
    if (c.open) ::close(c.fd);
  }
}

// ---------------------------------------------------------------------------
// Data path

void SocketTransport::check_tx_channel(const ChannelKey& key) const {
  if (key.src != opt_.self || key.dst >= opt_.world_size) {
    throw UnknownChannel("rank " + std::to_string(opt_.self) + " has no channel to " +
                         std::to_string(key.dst));
  }
}

void SocketTransport::enqueue_frame(int fd, std::vector<std::byte> frame, bool apply_delay) {
  auto deadline = steady_clock::now();
  if (apply_delay) {
    uint64_t ns = opt_.latency.base_delay_ns;
    if (opt_.latency.jitter_ns > 0) {
      std::lock_guard lock(tx_mu_);
      ns += std::uniform_int_distribution<uint64_t>(0, opt_.latency.jitter_ns)(delay_rng_);
    }
    deadline += nanoseconds(ns);
  }
  std::lock_guard lock(writer_mu_);
  // Frames on one connection stay FIFO: deadlines are clamped monotone per fd.
  auto& last = last_deadline_[fd];
  if (deadline < last) deadline = last;
  last = deadline;
  out_queue_.push_back(OutFrame{deadline, next_ticket_++, fd, std::move(frame)});
  std::push_heap(out_queue_.begin(), out_queue_.end(), std::greater<>{});
  writer_cv_.notify_one();
}

void SocketTransport::writer_main() {
  std::unique_lock lock(writer_mu_);
  while (!stop_.load(std::memory_order_acquire)) {
    if (out_queue_.empty()) {
      writer_cv_.wait_for(lock, 50ms);
      continue;
    }
    const auto now = steady_clock::now();
    if (out_queue_.front().deadline > now) {
      writer_cv_.wait_until(lock, out_queue_.front().deadline);
      continue;
    }
    std::pop_heap(out_queue_.begin(), out_queue_.end(), std::greater<>{});
    OutFrame frame = std::move(out_queue_.back());
    out_queue_.pop_back();
    lock.unlock();
    try {
      send_all_blocking(frame.fd, frame.bytes, Deadline(opt_.timeout_ms), &stop_);
    } catch (...) {
      if (!stop_.load(std::memory_order_acquire)) fail(std::current_exception());
      lock.lock();
      return;
    }
    lock.lock();
  }
}

uint64_t SocketTransport::tx_put(const ChannelKey& key, WindowId dst_window, uint64_t dst_offset,
                                 std::span<const std::byte> payload) {
  check_failed();
  check_tx_channel(key);
  uint64_t seq;
  {
    std::lock_guard lock(tx_mu_);
    seq = core_.next_put_seq(key);
  }
  enqueue_frame(outbound_[key.dst].fd,
                encode_put_frame(opt_.self, key.context, seq, dst_window, dst_offset, payload),
                /*apply_delay=*/true);
  return seq;
}

uint64_t SocketTransport::tx_signal(const ChannelKey& key, SignalId id, SignalOp op) {
  check_failed();
  check_tx_channel(key);
  uint64_t watermark;
  {
    std::lock_guard lock(tx_mu_);
    watermark = core_.current_watermark(key);
  }
  enqueue_frame(outbound_[key.dst].fd, encode_signal_frame(opt_.self, key.context, watermark, id, op),
                /*apply_delay=*/true);
  return watermark;
}

size_t SocketTransport::dispatch_frame(Conn& conn, ParsedFrame& f, bool from_inbound) {
  FabricMessage msg;
  switch (f.type) {
    case FrameType::Put:
      if (!from_inbound) throw MalformedFrame("put frame on an outbound connection");
      msg.channel = ChannelKey{f.src_rank, f.ctx, opt_.self};
      msg.body = PutBody{f.seq_or_watermark, f.dst_window, f.dst_offset, std::move(f.payload)};
      break;
    case FrameType::Signal:
      if (!from_inbound) throw MalformedFrame("signal frame on an outbound connection");
      msg.channel = ChannelKey{f.src_rank, f.ctx, opt_.self};
      msg.body = SignalBody{f.seq_or_watermark, f.signal_id, f.op};
      break;
    case FrameType::Ack:
      if (from_inbound) throw MalformedFrame("ack frame on an inbound connection");
      msg.channel = ChannelKey{opt_.self, f.ctx, f.src_rank};
      msg.body = AckBody{f.seq_or_watermark};
      break;
    case FrameType::Control:
      throw MalformedFrame("control frame on the data path");
  }
  return core_.handle(msg, sink_, [&](const ChannelKey& ch, uint64_t seq) {
    // Acks travel back on the connection the put arrived on.
    enqueue_frame(conn.fd, encode_ack_frame(opt_.self, ch.context, seq), /*apply_delay=*/true);
  });
}

size_t SocketTransport::rx_progress() {
  check_failed();
  size_t applied = 0;

  auto drain_conn = [&](Conn& conn, bool from_inbound) {
    if (!conn.open) return;
    std::byte buf[65536];
    for (;;) {
      const ssize_t n = ::recv(conn.fd, buf, sizeof(buf), 0);
      if (n > 0) {
        conn.parser.feed({buf, static_cast<size_t>(n)});
        if (static_cast<size_t>(n) < sizeof(buf)) break;
        continue;
      }
      if (n == 0) {
        // Peer tore down; anything still owed would surface as a timeout.
        conn.open = false;
        break;
      }
      if (errno == EAGAIN || errno == EWOULDBLOCK) break;
      if (errno == EINTR) continue;
      conn.open = false;
      break;
    }
    while (auto f = conn.parser.next()) {
      applied += dispatch_frame(conn, *f, from_inbound);
    }
  };

  try {
    for (auto& c : inbound_) drain_conn(c, true);
    for (auto& c : outbound_) drain_conn(c, false);
  } catch (...) {
    fail(std::current_exception());
    throw;
  }
  return applied;
}

bool SocketTransport::has_pending() const {
  std::lock_guard lock(writer_mu_);
  return !out_queue_.empty();
}

void SocketTransport::fail(std::exception_ptr e) {
  std::lock_guard lock(fail_mu_);
  if (!failure_) failure_ = e;
}

void SocketTransport::check_failed() const {
  std::lock_guard lock(fail_mu_);
  if (failure_) std::rethrow_exception(failure_);
}

// ---------------------------------------------------------------------------
// Socket communicator construction

namespace {

std::string config_digest(const Config& c) {
  std::string s;
  s += std::to_string(c.n_contexts) + "/";
  s += (c.backend ? to_string(*c.backend) : "auto") + std::string("/");
  s += std::to_string(c.signal_cells) + "/" + std::to_string(c.counter_cells) + "/";
  s += std::to_string(c.queue_depth) + "/";
  s += std::to_string(c.latency.base_delay_ns) + "/" + std::to_string(c.latency.jitter_ns);
  return s;
}

}  // namespace

std::unique_ptr<DevComm> comm_init_socket(const std::string& host, uint16_t port,
                                          uint32_t world_size, RankId self, const Config& config) {
  if (config.progress != ProgressMode::Threaded) {
    throw UsageError("the socket transport requires threaded progress");
  }
  std::unique_ptr<DevComm> comm(new DevComm(self, world_size, config));
  comm->transport_kind_ = TransportKind::Socket;

  SocketTransport::Options opt;
  opt.self = self;
  opt.world_size = world_size;
  opt.host = host;
  opt.rendezvous_port = port;
  opt.timeout_ms = config.timeout_ms;
  opt.latency = config.latency;
  opt.config_digest = config_digest(config);

  auto transport = std::make_unique<SocketTransport>(opt, *comm);
  comm->transport_ = transport.get();
  comm->owned_transport_ = std::move(transport);
  comm->init_backend();
  comm->start_progress_thread();
  return comm;
}

std::vector<uint64_t> DevComm::socket_gather_window_sizes(uint64_t my_size) {
  auto* st = dynamic_cast<SocketTransport*>(owned_transport_.get());
  if (!st) throw Error("window registration: socket transport missing");
  return st->gather_window_sizes(my_size);
}

void DevComm::socket_control_barrier() {
  auto* st = dynamic_cast<SocketTransport*>(owned_transport_.get());
  if (!st) throw Error("control barrier: socket transport missing");
  st->control_barrier();
}

}  // namespace ginsim
