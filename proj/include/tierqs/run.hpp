#pragma once

// Runs a whole circuit on one machine: a coordinator plus worker threads or
// worker processes, all talking over the same control protocol.

#include "tierqs/cluster.hpp"

#include <spawn.h>
#include <sys/wait.h>

extern char** environ;

namespace tierqs {

enum class WorkerMode { Threads, Processes };

struct LocalRunConfig {
    unsigned worker_count = 2;
    SessionConfig session;
    CoordinatorOptions coordinator;
    WorkerMode mode = WorkerMode::Threads;
    /// Executable started as `<exe> worker --endpoint <path>` in process mode.
    fs::path worker_exe = "/proc/self/exe";
    /// Thread mode only: options for the i-th spawned worker (may be shorter).
    std::vector<WorkerOptions> worker_options;
};

struct RunReport {
    std::string framework;
    unsigned worker_count = 0;
    std::vector<GateMetrics> rows;          // gate-major, node-minor
    RoundMetrics round;                     // the whole circuit pass
    std::vector<RoundMetrics> gate_rounds;  // per-gate barrier rounds
    std::vector<std::vector<std::uint64_t>> control_bytes;
    std::vector<TraceEntry> trace;
};

namespace detail {

class ChildProcess {
public:
    ChildProcess(const fs::path& exe, const std::vector<std::string>& args)
    {
        std::vector<char*> argv;
        std::string exe_s = exe.string();
        argv.push_back(exe_s.data());
        std::vector<std::string> copy = args;
        for (std::string& a : copy)
            argv.push_back(a.data());
        argv.push_back(nullptr);
        if (const int rc = ::posix_spawn(&pid_, exe_s.c_str(), nullptr, nullptr, argv.data(), environ); rc != 0)
            throw std::runtime_error("cannot start worker '" + exe_s + "': " + std::strerror(rc));
    }
    ChildProcess(const ChildProcess&) = delete;
    ChildProcess& operator=(const ChildProcess&) = delete;
    ~ChildProcess()
    {
        if (pid_ > 0) {
            ::kill(pid_, SIGKILL);
            wait();
        }
    }

    int wait()
    {
        int status = 0;
        while (::waitpid(pid_, &status, 0) < 0 && errno == EINTR) {
        }
        pid_ = -1;
        return WIFEXITED(status) ? WEXITSTATUS(status) : 128;
    }

private:
    pid_t pid_ = -1;
};

}  // namespace detail

inline RunReport run_circuit_local(const PoolManifest& manifest, const Circuit& circuit, const LocalRunConfig& cfg)
{
    circuit.validate();
    if (circuit.n_qubits != manifest.n_qubits)
        throw std::invalid_argument("circuit has " + std::to_string(circuit.n_qubits) + " qubits, pool has " +
                                    std::to_string(manifest.n_qubits));
    if (!is_power_of_two(cfg.worker_count))
        throw PartitionError("worker count must be a power of two, got " + std::to_string(cfg.worker_count));
    if (cfg.session.cache_bytes < manifest.chunk_bytes)
        throw StorageError("cache of " + std::to_string(cfg.session.cache_bytes) + " bytes cannot hold one " +
                           std::to_string(manifest.chunk_bytes) + "-byte chunk");
    cfg.session.backend.profile.validate();

    ControlListener listener(make_endpoint_path());
    std::vector<std::thread> threads;
    std::vector<std::unique_ptr<detail::ChildProcess>> children;

    CoordinatorResult result;
    std::exception_ptr failure;
    {
        std::vector<Channel> channels;
        try {
            for (unsigned i = 0; i < cfg.worker_count; ++i) {
                if (cfg.mode == WorkerMode::Threads) {
                    WorkerOptions wo = i < cfg.worker_options.size() ? cfg.worker_options[i] : WorkerOptions{};
                    threads.emplace_back([ep = listener.endpoint(), wo] {
                        try {
                            run_worker(ep, wo);
                        } catch (const std::exception&) {
                            // the coordinator observes the dropped connection
                        }
                    });
                } else {
                    children.push_back(std::make_unique<detail::ChildProcess>(
                        cfg.worker_exe, std::vector<std::string>{"worker", "--endpoint", listener.endpoint().string()}));
                }
                // Accept in spawn order so node ids match worker_options indices.
                auto c = listener.accept(1, std::chrono::milliseconds(30000));
                channels.push_back(std::move(c.front()));
            }
            result = run_coordinator(circuit, manifest, channels, cfg.session, cfg.coordinator);
        } catch (...) {
            failure = std::current_exception();
        }
    }  // channels close here, unblocking any worker still waiting

    for (std::thread& t : threads)
        t.join();
    for (auto& c : children)
        c->wait();
    if (failure)
        std::rethrow_exception(failure);

    RunReport rep;
    rep.framework = cfg.session.backend.name();
    rep.worker_count = cfg.worker_count;
    rep.rows = std::move(result.gate_metrics);
    rep.gate_rounds = std::move(result.gate_rounds);
    rep.control_bytes = std::move(result.control_bytes);
    rep.trace = std::move(result.trace);
    if (rep.rows.empty()) {
        rep.round.total_ms = result.pass_ms;
    } else {
        rep.round = aggregate_round(rep.rows, result.pass_ms, cfg.worker_count, 0);
    }
    return rep;
}

}  // namespace tierqs
