#include <sys/wait.h>
#include <unistd.h>

#include <cstring>
#include <thread>

#include "ginsim/harness.hpp"
#include "ginsim/socket_transport.hpp"

namespace ginsim {

namespace {

// Build each rank's comm, run its body, join everyone, then tear the comms
// down from the launcher thread so no rank outlives its peers' endpoints.
void launch_common(const LaunchOptions& opts, uint32_t n_comms,
                   const std::function<void(RankId, std::vector<DevComm*>&)>& body) {
  if (opts.ranks == 0) throw UsageError("launch: need at least one rank");
  Config cfg = opts.config;
  cfg.progress = ProgressMode::Threaded;  // rank agents block; someone must pump

  std::vector<std::shared_ptr<InProcGroup>> groups;
  std::vector<uint16_t> ports;
  if (opts.transport == TransportKind::Inproc) {
    for (uint32_t c = 0; c < n_comms; ++c) groups.push_back(InProcGroup::create(opts.ranks));
  } else {
    for (uint32_t c = 0; c < n_comms; ++c) {
      ports.push_back(opts.port != 0 ? static_cast<uint16_t>(opts.port + c)
                                     : reserve_loopback_port());
    }
  }

  std::vector<std::vector<std::unique_ptr<DevComm>>> comms(opts.ranks);
  std::vector<std::exception_ptr> errors(opts.ranks);
  std::vector<std::thread> agents;
  agents.reserve(opts.ranks);

  for (RankId r = 0; r < opts.ranks; ++r) {
    agents.emplace_back([&, r] {
      try {
        std::vector<DevComm*> pool;
        for (uint32_t c = 0; c < n_comms; ++c) {
          auto comm = (opts.transport == TransportKind::Inproc)
                          ? comm_init(groups[c], r, cfg)
                          : comm_init_socket(opts.host, ports[c], opts.ranks, r, cfg);
          pool.push_back(comm.get());
          comms[r].push_back(std::move(comm));
        }
        body(r, pool);
      } catch (...) {
        errors[r] = std::current_exception();
      }
    });
  }
  for (auto& t : agents) t.join();

  // Destroy communicators only after every agent has finished.
  for (auto& per_rank : comms) per_rank.clear();

  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

void launch(const LaunchOptions& opts, const std::function<void(DevComm&)>& program) {
  launch_common(opts, 1, [&](RankId, std::vector<DevComm*>& pool) { program(*pool[0]); });
}

void launch_pool(const LaunchOptions& opts, uint32_t n_comms,
                 const std::function<void(std::vector<DevComm*>&)>& program) {
  if (n_comms == 0) throw UsageError("launch_pool: need at least one communicator");
  launch_common(opts, n_comms, [&](RankId, std::vector<DevComm*>& pool) { program(pool); });
}

void launch_processes(const std::string& exe, const std::vector<std::string>& args,
                      uint32_t ranks) {
  if (ranks == 0) throw UsageError("launch_processes: need at least one rank");
  std::vector<pid_t> children;
  children.reserve(ranks);

  for (uint32_t r = 0; r < ranks; ++r) {
    std::vector<std::string> argv_strings;
    argv_strings.push_back(exe);
    argv_strings.insert(argv_strings.end(), args.begin(), args.end());
    argv_strings.push_back("--rank");
    argv_strings.push_back(std::to_string(r));

    std::vector<char*> argv;
    for (auto& s : argv_strings) argv.push_back(s.data());
    argv.push_back(nullptr);

    const pid_t pid = ::fork();
    if (pid < 0) throw ChildFailure("fork failed: " + std::string(strerror(errno)));
    if (pid == 0) {
      ::execv(exe.c_str(), argv.data());
      ::_exit(127);  // exec failed
    }
    children.push_back(pid);
  }

  std::string failure;
  for (uint32_t r = 0; r < ranks; ++r) {
    int status = 0;
    if (::waitpid(children[r], &status, 0) < 0) {
      failure = "waitpid failed for rank " + std::to_string(r);
      continue;
    }
    if (WIFEXITED(status) && WEXITSTATUS(status) != 0) {
      failure = "rank " + std::to_string(r) + " exited with status " +
                std::to_string(WEXITSTATUS(status));
    } else if (WIFSIGNALED(status)) {
      failure = "rank " + std::to_string(r) + " killed by signal " +
                std::to_string(WTERMSIG(status));
    }
  }
  if (!failure.empty()) throw ChildFailure(failure);
}

}  // namespace ginsim
