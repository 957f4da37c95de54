// tierqs: out-of-core shared-storage state-vector simulator.
//
//   tierqs init    --pool-dir DIR --qubits N [--chunk-bytes B] [--basis K]
//   tierqs run     --pool-dir DIR --circuit FILE [--workers W] [--backend direct|emulated]
//   tierqs bench   --pool-dir DIR [--reps R]
//   tierqs verify  --pool-dir DIR [--circuit FILE | --random-gates G --seed S]
//   tierqs analyze [--qubits N] [--config FILE] [--m-iter M --n-gate G --t-train T]
//   tierqs worker  --endpoint SOCKET        (started by run/bench/verify)
//
// Every option can also be set through an environment variable named
// TIERQS_<OPTION>, e.g. TIERQS_QUBITS=20.

#include "tierqs/cli.hpp"

#include "CLI11.hpp"

#include <iostream>

using namespace tierqs;

namespace {

struct NetworkFlags {
    double latency_ms = 1.0;
    double bandwidth_gbps = 10.0;  // gigabits per second
    unsigned replication = 1;
    std::string backend = "direct";
};

void add_pool_flags(CLI::App* cmd, cli::RunConfig& cfg)
{
    cmd->add_option("--pool-dir", cfg.pool_dir, "Pool directory")->envname("TIERQS_POOL_DIR");
}

void add_run_flags(CLI::App* cmd, cli::RunConfig& cfg, NetworkFlags& net, bool& threads)
{
    add_pool_flags(cmd, cfg);
    cmd->add_option("--circuit", cfg.circuit_path, "Circuit file (h/x/u/cx lines)")->envname("TIERQS_CIRCUIT");
    cmd->add_option("--workers", cfg.worker_count, "Worker count (power of two)")->envname("TIERQS_WORKERS");
    cmd->add_option("--cache-bytes", cfg.cache_bytes, "Per-worker cache capacity (0 = scaled default)")
        ->envname("TIERQS_CACHE_BYTES");
    cmd->add_option("--backend", net.backend, "Storage backend")
        ->check(CLI::IsMember({"direct", "emulated"}))
        ->envname("TIERQS_BACKEND");
    cmd->add_option("--latency-ms", net.latency_ms, "Emulated per-request latency (ms)")
        ->check(CLI::NonNegativeNumber)
        ->envname("TIERQS_LATENCY_MS");
    cmd->add_option("--bandwidth-gbps", net.bandwidth_gbps, "Emulated link bandwidth (Gbit/s)")
        ->check(CLI::PositiveNumber)
        ->envname("TIERQS_BANDWIDTH_GBPS");
    cmd->add_option("--replication", net.replication, "Emulated replication factor")
        ->check(CLI::Range(1u, 16u))
        ->envname("TIERQS_REPLICATION");
    cmd->add_option("--reps", cfg.reps, "Repetitions")->envname("TIERQS_REPS");
    cmd->add_option("--seed", cfg.seed, "Random seed")->envname("TIERQS_SEED");
    cmd->add_flag("--sequential", cfg.sequential, "Disable read prefetch")->envname("TIERQS_SEQUENTIAL");
    cmd->add_option("--target-qubit", cfg.target_qubit, "Qubit for the default H,X circuit")
        ->envname("TIERQS_TARGET_QUBIT");
    cmd->add_option("--metrics-out", cfg.metrics_out, "Metrics CSV path");
    cmd->add_option("--report-out", cfg.report_out, "Structured report path");
    cmd->add_option("--barrier-timeout-ms", [&cfg](const CLI::results_t& r) {
        cfg.barrier_timeout = std::chrono::milliseconds(std::stoll(r.front()));
        return true;
    }, "Per-gate barrier timeout");
    cmd->add_flag("--threads", threads, "Run workers as threads instead of processes");
}

void apply_network(cli::RunConfig& cfg, const NetworkFlags& net)
{
    cfg.backend.kind = net.backend == "emulated" ? BackendConfig::Kind::Emulated : BackendConfig::Kind::Direct;
    cfg.backend.profile.per_request_latency =
        std::chrono::nanoseconds(static_cast<std::int64_t>(net.latency_ms * 1e6));
    cfg.backend.profile.bandwidth_bytes_per_s = net.bandwidth_gbps * 1e9 / 8.0;
    cfg.backend.profile.replication_factor = net.replication;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Out-of-core shared-storage state-vector simulator"};
    app.require_subcommand(1);

    cli::RunConfig cfg;
    NetworkFlags net;
    bool threads = false;

    auto* init = app.add_subcommand("init", "Create a pool and write a basis state");
    add_pool_flags(init, cfg);
    init->add_option("--qubits", cfg.n_qubits, "Qubit count")->envname("TIERQS_QUBITS");
    init->add_option("--chunk-bytes", cfg.chunk_bytes, "Chunk size (power of two >= 32)")
        ->envname("TIERQS_CHUNK_BYTES");
    init->add_option("--shards", cfg.shards, "Shard file count")->envname("TIERQS_SHARDS");
    init->add_option("--basis", cfg.basis, "Initial basis index (default 2^13, clamped)")->envname("TIERQS_BASIS");
    init->add_flag("--force", cfg.force, "Replace an existing pool");

    auto* run = app.add_subcommand("run", "Run a circuit out of core");
    add_run_flags(run, cfg, net, threads);

    auto* bench = app.add_subcommand("bench", "Compare backends and cache sizes");
    add_run_flags(bench, cfg, net, threads);

    auto* verify = app.add_subcommand("verify", "Check an out-of-core run against the in-memory oracle");
    add_run_flags(verify, cfg, net, threads);
    verify->add_option("--random-gates", cfg.random_gates, "Random circuit length when no --circuit");
    verify->add_option("--oracle-cap", cfg.oracle_qubit_cap, "Largest qubit count the oracle may hold");
    verify->add_option("--corrupt-offset", cfg.corrupt_offset, "Fault injection: flip bits of the pool byte at this offset after the run");

    cli::AnalyzeConfig acfg;
    double m_iter = 0, n_gate = 0, t_train = 0;
    auto* analyze = app.add_subcommand("analyze", "Compute/link bottleneck and storage cost report");
    analyze->add_option("--qubits", acfg.n_qubits, "Qubit count")->envname("TIERQS_QUBITS");
    analyze->add_option("--config", acfg.config_path, "JSON profile overrides");
    analyze->add_option("--m-iter", m_iter, "Training iterations");
    analyze->add_option("--n-gate", n_gate, "Gates per iteration");
    analyze->add_option("--t-train", t_train, "Training time budget (s)");
    analyze->add_option("--compute", acfg.compute, "Compute profile for the bottleneck verdict");
    analyze->add_option("--link", acfg.link, "Link profile for the bottleneck verdict");
    analyze->add_flag("--read-write", acfg.read_write, "Charge a read and a write per gate on the link");
    analyze->add_flag("--json", acfg.json, "Emit JSON");

    std::string endpoint;
    auto* worker = app.add_subcommand("worker", "Serve one coordinator (internal)");
    worker->add_option("--endpoint", endpoint, "Coordinator socket")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? cli::kExitOk : cli::kExitUsage;  // --help exits 0
    }

    apply_network(cfg, net);
    cfg.mode = threads ? WorkerMode::Threads : WorkerMode::Processes;

    if (*init)
        return cli::cmd_init(cfg, std::cout, std::cerr);
    if (*run)
        return cli::cmd_run(cfg, std::cout, std::cerr);
    if (*bench)
        return cli::cmd_bench(cfg, std::cout, std::cerr);
    if (*verify)
        return cli::cmd_verify(cfg, std::cout, std::cerr);
    if (*analyze) {
        const int given = (m_iter > 0) + (n_gate > 0) + (t_train > 0);
        if (given == 3)
            acfg.workload = analysis::WorkloadParams{m_iter, n_gate, t_train};
        else if (given != 0) {
            std::cerr << "analyze: --m-iter, --n-gate and --t-train must be given together\n";
            return cli::kExitUsage;
        }
        return cli::cmd_analyze(acfg, std::cout, std::cerr);
    }
    if (*worker) {
        try {
            return run_worker(endpoint);
        } catch (const std::exception& e) {
            std::cerr << "worker: " << e.what() << "\n";
            return cli::kExitFail;
        }
    }
    return cli::kExitUsage;
}
