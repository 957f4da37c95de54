#pragma once

// Command implementations behind the `tierqs` executable. Each returns a
// process exit code: 0 success, 1 run/verification failure, 2 usage error.

#include "tierqs/analysis.hpp"
#include "tierqs/run.hpp"

#include <random>

namespace tierqs::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFail = 1;
inline constexpr int kExitUsage = 2;

struct RunConfig {
    unsigned n_qubits = 24;
    std::uint64_t chunk_bytes = 0;  // 0: pick a default for the pool size
    std::uint64_t cache_bytes = 0;  // 0: scale from the pool size
    unsigned worker_count = 2;
    std::size_t shards = 2;
    BackendConfig backend;
    std::string circuit_path;
    fs::path pool_dir = "pool";
    unsigned reps = 3;
    std::uint64_t seed = 1;
    bool sequential = false;
    unsigned target_qubit = 13;
    std::optional<Index> basis;
    bool force = false;
    WorkerMode mode = WorkerMode::Processes;
    fs::path worker_exe = "/proc/self/exe";
    fs::path metrics_out;  // default <pool_dir>/metrics.csv
    fs::path report_out;   // default <pool_dir>/report.json
    // verify
    unsigned oracle_qubit_cap = 26;
    std::size_t random_gates = 20;
    std::optional<std::uint64_t> corrupt_offset;
    double tolerance = 1e-12;
    std::chrono::milliseconds barrier_timeout{60000};
};

inline constexpr std::uint64_t kDefaultChunkBytes = 256ull << 10;
inline constexpr std::uint64_t kReferencePoolBytes = 2ull << 30;
inline constexpr std::uint64_t kReferenceSmallCache = 512ull << 20;
inline constexpr std::uint64_t kReferenceLargeCache = 1024ull << 20;

inline std::uint64_t default_chunk_bytes(unsigned n_qubits, std::size_t shards)
{
    const std::uint64_t total = pow2(n_qubits) * kAmplitudeBytes;
    std::uint64_t c = kDefaultChunkBytes;
    while (c > 32 && c * 2 * shards > total)
        c /= 2;
    return c;
}

/// Reference cache sizes (512 MiB, 1 GiB for a 2 GiB pool), scaled by pool size when the pool is below 2 GiB.
inline std::uint64_t scaled_cache_bytes(std::uint64_t reference_cache, std::uint64_t pool_bytes, std::uint64_t chunk_bytes)
{
    std::uint64_t c = reference_cache;
    if (pool_bytes < kReferencePoolBytes)
        c = static_cast<std::uint64_t>(static_cast<double>(reference_cache) * pool_bytes / kReferencePoolBytes);
    return std::max(c, chunk_bytes);
}

inline Index default_basis(unsigned n_qubits) { return pow2(std::min(13u, n_qubits - 1)); }

inline SessionConfig session_for(const RunConfig& cfg, const PoolManifest& m, std::uint64_t cache_bytes)
{
    SessionConfig s;
    s.pool_dir = fs::absolute(cfg.pool_dir);
    s.cache_bytes = cache_bytes ? cache_bytes : scaled_cache_bytes(kReferenceSmallCache, m.total_bytes(), m.chunk_bytes);
    s.backend = cfg.backend;
    s.sequential = cfg.sequential;
    return s;
}

inline LocalRunConfig local_config(const RunConfig& cfg, const SessionConfig& s)
{
    LocalRunConfig l;
    l.worker_count = cfg.worker_count;
    l.session = s;
    l.mode = cfg.mode;
    l.worker_exe = cfg.worker_exe;
    l.coordinator.barrier_timeout = cfg.barrier_timeout;
    return l;
}

inline Circuit circuit_for(const RunConfig& cfg, unsigned n_qubits)
{
    if (!cfg.circuit_path.empty())
        return load_circuit(cfg.circuit_path, n_qubits);
    return hx_circuit(n_qubits, cfg.target_qubit);
}

inline nlohmann::json to_json(const GateMetrics& g)
{
    return {{"node", g.node},
            {"gate_seq", g.gate_seq},
            {"gate_label", g.gate_label},
            {"compute_ms", g.compute_ms},
            {"read_ms", g.read_ms},
            {"write_ms", g.write_ms},
            {"writeback_ms", g.writeback_ms},
            {"total_ms", g.total_ms},
            {"speed_mb_s", g.speed_mb_s},
            {"bytes", g.bytes_processed}};
}

inline nlohmann::json to_json(const RoundMetrics& r)
{
    return {{"round_seq", r.round_seq},
            {"total_ms", r.total_ms},
            {"aggregate_speed_mb_s", r.aggregate_speed_mb_s},
            {"bytes", r.bytes_processed},
            {"compute_ms_sum", r.compute_ms},
            {"read_ms_sum", r.read_ms},
            {"write_ms_sum", r.write_ms},
            {"writeback_ms_sum", r.writeback_ms}};
}

inline void print_rows(std::ostream& out, const std::string& framework, const RunReport& rep, int rep_no)
{
    out << std::left << std::setw(10) << "framework" << std::setw(7) << "node" << std::setw(14) << "gate"
        << std::right << std::setw(10) << "compute" << std::setw(10) << "read" << std::setw(10) << "write"
        << std::setw(11) << "writeback" << std::setw(10) << "total" << std::setw(10) << "MB/s" << "\n";
    auto line = [&](const std::string& node, const std::string& label, double c, double r, double w, double wb,
                    double total, double speed) {
        out << std::left << std::setw(10) << framework << std::setw(7) << node << std::setw(14) << label << std::right
            << std::fixed << std::setprecision(1) << std::setw(10) << c << std::setw(10) << r << std::setw(10) << w
            << std::setw(11) << wb << std::setw(10) << total << std::setw(10) << speed << "\n";
    };
    for (const GateMetrics& g : rep.rows)
        line("Node " + std::to_string(g.node), g.gate_label, g.compute_ms, g.read_ms, g.write_ms, g.writeback_ms,
             g.total_ms, g.speed_mb_s);
    line("round", "Round-" + std::to_string(rep_no), rep.round.compute_ms, rep.round.read_ms, rep.round.write_ms,
         rep.round.writeback_ms, rep.round.total_ms, rep.round.aggregate_speed_mb_s);
}

// ---------------------------------------------------------------------------

inline int cmd_init(const RunConfig& cfg, std::ostream& out, std::ostream& err)
{
    try {
        const Index k = cfg.basis.value_or(default_basis(cfg.n_qubits));
        if (cfg.n_qubits == 0 || cfg.n_qubits > kMaxQubits) {
            err << "init: --qubits must be in [1, " << kMaxQubits << "]\n";
            return kExitUsage;
        }
        if (k >= pow2(cfg.n_qubits)) {
            err << "init: basis index " << k << " is out of range for " << cfg.n_qubits << " qubits (must be < "
                << pow2(cfg.n_qubits) << ")\n";
            return kExitUsage;
        }
        if (fs::exists(cfg.pool_dir) && !fs::is_empty(cfg.pool_dir) && !cfg.force) {
            err << "init: pool directory '" << cfg.pool_dir.string() << "' is not empty (use --force)\n";
            return kExitUsage;
        }
        const std::uint64_t chunk = cfg.chunk_bytes ? cfg.chunk_bytes : default_chunk_bytes(cfg.n_qubits, cfg.shards);
        const PoolManifest m = create_pool(cfg.n_qubits, chunk, cfg.shards, cfg.pool_dir, cfg.force);
        write_basis_state(m, k);
        out << "pool '" << cfg.pool_dir.string() << "': " << m.n_qubits << " qubits, " << m.total_bytes()
            << " bytes in " << m.shards.size() << " shard(s), chunk " << m.chunk_bytes << " bytes\n";
        out << "initial state: basis index " << k << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        err << "init: " << e.what() << "\n";
        return kExitUsage;
    }
}

inline int cmd_run(const RunConfig& cfg, std::ostream& out, std::ostream& err)
{
    PoolManifest m;
    Circuit circuit;
    try {
        if (cfg.circuit_path.empty()) {
            err << "run: --circuit is required\n";
            return kExitUsage;
        }
        m = PoolManifest::load(cfg.pool_dir);
        circuit = load_circuit(cfg.circuit_path, m.n_qubits);
    } catch (const std::exception& e) {
        err << "run: " << e.what() << "\n";
        return kExitUsage;
    }

    const SessionConfig session = session_for(cfg, m, cfg.cache_bytes);
    std::vector<MetricsRow> rows;
    nlohmann::json reps = nlohmann::json::array();
    try {
        for (unsigned r = 0; r < std::max(1u, cfg.reps); ++r) {
            RunReport rep = run_circuit_local(m, circuit, local_config(cfg, session));
            rep.round.round_seq = static_cast<int>(r);
            for (const GateMetrics& g : rep.rows)
                rows.push_back(to_row(g, rep.framework, static_cast<int>(r)));
            rows.push_back(to_row(rep.round, rep.framework, static_cast<int>(r)));
            print_rows(out, rep.framework, rep, static_cast<int>(r));
            nlohmann::json jr{{"rep", r}, {"round", to_json(rep.round)}};
            for (const auto& g : rep.rows)
                jr["rows"].push_back(to_json(g));
            for (const auto& g : rep.gate_rounds)
                jr["gate_rounds"].push_back(to_json(g));
            reps.push_back(jr);
        }
    } catch (const RunAborted& e) {
        err << "run: aborted at gate " << e.failed_gate_seq() << ": " << e.what() << "\n";
        return kExitFail;
    } catch (const std::exception& e) {
        err << "run: " << e.what() << "\n";
        return kExitFail;
    }

    const fs::path csv = cfg.metrics_out.empty() ? cfg.pool_dir / "metrics.csv" : cfg.metrics_out;
    const fs::path json = cfg.report_out.empty() ? cfg.pool_dir / "report.json" : cfg.report_out;
    std::ofstream(csv) << [&] {
        std::ostringstream s;
        write_metrics_csv(s, rows);
        return s.str();
    }();
    nlohmann::json report{{"framework", session.backend.name()},
                          {"n_qubits", m.n_qubits},
                          {"workers", cfg.worker_count},
                          {"chunk_bytes", m.chunk_bytes},
                          {"cache_bytes", session.cache_bytes},
                          {"circuit", format_circuit(circuit)},
                          {"reps", reps}};
    std::ofstream(json) << report.dump(2) << "\n";
    out << "metrics: " << csv.string() << "\nreport:  " << json.string() << "\n";
    return kExitOk;
}

inline double median(std::vector<double> v)
{
    if (v.empty())
        return 0;
    std::sort(v.begin(), v.end());
    const std::size_t mid = v.size() / 2;
    return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

struct BenchCell {
    std::string backend;
    std::uint64_t cache_bytes = 0;
    std::vector<double> speeds;  // aggregate MB/s per rep
    std::vector<double> compute_ms, read_ms, write_ms, writeback_ms, total_ms;  // per node-gate row
};

struct BenchResult {
    std::vector<BenchCell> cells;
    std::vector<MetricsRow> rows;

    const BenchCell& cell(const std::string& backend, std::uint64_t cache) const
    {
        for (const auto& c : cells)
            if (c.backend == backend && c.cache_bytes == cache)
                return c;
        throw std::out_of_range("no bench cell for " + backend);
    }
};

inline constexpr double kReferenceDirectMBs = 207.5;
inline constexpr double kReferenceRemoteMBs = 44.5;

/// Runs `circuit` under both backends and both cache sizes, interleaving the
/// configurations within every repetition.
inline BenchResult run_bench(const RunConfig& cfg, const PoolManifest& m, const Circuit& circuit,
                             std::uint64_t small_cache, std::uint64_t large_cache)
{
    BenchResult res;
    NetworkProfile profile = cfg.backend.profile;
    const BackendConfig direct{BackendConfig::Kind::Direct, profile};
    const BackendConfig remote{BackendConfig::Kind::Emulated, profile};
    for (const auto& b : {direct, remote})
        for (std::uint64_t c : {small_cache, large_cache})
            res.cells.push_back({b.name(), c, {}, {}, {}, {}, {}, {}});

    for (unsigned r = 0; r < std::max(1u, cfg.reps); ++r) {
        std::size_t idx = 0;
        for (const auto& b : {direct, remote}) {
            for (std::uint64_t c : {small_cache, large_cache}) {
                RunConfig rc = cfg;
                rc.backend = b;
                const RunReport rep = run_circuit_local(m, circuit, local_config(rc, session_for(rc, m, c)));
                BenchCell& cell = res.cells[idx++];
                cell.speeds.push_back(rep.round.aggregate_speed_mb_s);
                for (const GateMetrics& g : rep.rows) {
                    cell.compute_ms.push_back(g.compute_ms);
                    cell.read_ms.push_back(g.read_ms);
                    cell.write_ms.push_back(g.write_ms);
                    cell.writeback_ms.push_back(g.writeback_ms);
                    cell.total_ms.push_back(g.total_ms);
                }
                const std::string fw = b.name() + "/cache=" + std::to_string(c >> 20) + "MiB";
                RoundMetrics round = rep.round;
                round.round_seq = static_cast<int>(r);
                for (const GateMetrics& g : rep.rows)
                    res.rows.push_back(to_row(g, fw, static_cast<int>(r)));
                res.rows.push_back(to_row(round, fw, static_cast<int>(r)));
            }
        }
    }
    return res;
}

inline int cmd_bench(const RunConfig& cfg, std::ostream& out, std::ostream& err)
{
    PoolManifest m;
    Circuit circuit;
    try {
        m = PoolManifest::load(cfg.pool_dir);
        circuit = circuit_for(cfg, m.n_qubits);
    } catch (const std::exception& e) {
        err << "bench: " << e.what() << "\n";
        return kExitUsage;
    }
    const std::uint64_t small = cfg.cache_bytes ? cfg.cache_bytes
                                                : scaled_cache_bytes(kReferenceSmallCache, m.total_bytes(), m.chunk_bytes);
    const std::uint64_t large = cfg.cache_bytes ? 2 * cfg.cache_bytes
                                                : scaled_cache_bytes(kReferenceLargeCache, m.total_bytes(), m.chunk_bytes);
    BenchResult res;
    try {
        res = run_bench(cfg, m, circuit, small, large);
    } catch (const RunAborted& e) {
        err << "bench: aborted at gate " << e.failed_gate_seq() << ": " << e.what() << "\n";
        return kExitFail;
    } catch (const std::exception& e) {
        err << "bench: " << e.what() << "\n";
        return kExitFail;
    }

    nlohmann::json report{{"n_qubits", m.n_qubits},
                          {"workers", cfg.worker_count},
                          {"chunk_bytes", m.chunk_bytes},
                          {"reps", cfg.reps},
                          {"latency_ms", std::chrono::duration<double, std::milli>(
                                             cfg.backend.profile.per_request_latency).count()},
                          {"bandwidth_bytes_per_s", cfg.backend.profile.bandwidth_bytes_per_s},
                          {"replication", cfg.backend.profile.replication_factor}};
    out << "Benchmark: " << m.n_qubits << " qubits, " << cfg.worker_count << " workers, " << cfg.reps
        << " repetition(s), circuit of " << circuit.gates.size() << " gate(s)\n\n";
    out << std::left << std::setw(10) << "backend" << std::right << std::setw(10) << "cache" << std::setw(14)
        << "median MB/s" << std::setw(12) << "compute" << std::setw(10) << "read" << std::setw(10) << "write"
        << std::setw(11) << "writeback" << std::setw(10) << "total" << "\n";
    for (const BenchCell& c : res.cells) {
        const double sp = median(c.speeds);
        out << std::left << std::setw(10) << c.backend << std::right << std::setw(7) << (c.cache_bytes >> 20) << "MiB"
            << std::fixed << std::setprecision(1) << std::setw(14) << sp << std::setw(12) << median(c.compute_ms)
            << std::setw(10) << median(c.read_ms) << std::setw(10) << median(c.write_ms) << std::setw(11)
            << median(c.writeback_ms) << std::setw(10) << median(c.total_ms) << "\n";
        report["cells"].push_back({{"backend", c.backend},
                                   {"cache_bytes", c.cache_bytes},
                                   {"median_speed_mb_s", sp},
                                   {"speeds_mb_s", c.speeds},
                                   {"median_compute_ms", median(c.compute_ms)},
                                   {"median_read_ms", median(c.read_ms)},
                                   {"median_write_ms", median(c.write_ms)},
                                   {"median_writeback_ms", median(c.writeback_ms)},
                                   {"median_total_ms", median(c.total_ms)}});
    }
    out << "\n";
    for (std::uint64_t c : {small, large}) {
        const double d = median(res.cell("direct", c).speeds);
        const double e = median(res.cell("emulated", c).speeds);
        const double speedup = e > 0 ? d / e : 0;
        out << "cache " << (c >> 20) << " MiB: speedup direct/emulated = " << std::setprecision(2) << speedup << "x ("
            << std::setprecision(0) << (speedup - 1) * 100 << "% improvement)\n";
        report["speedup"][std::to_string(c)] = speedup;
    }
    for (const std::string b : {"direct", "emulated"}) {
        const double s = median(res.cell(b, small).speeds);
        const double l = median(res.cell(b, large).speeds);
        const double change = s > 0 ? (l - s) / s : 0;
        out << b << ": doubling the cache changes median speed by " << std::setprecision(1) << change * 100 << "%\n";
        report["cache_change"][b] = change;
    }
    const double ref = kReferenceDirectMBs / kReferenceRemoteMBs;
    out << "reference: shared-storage 207.5 MB/s vs replicated store 44.5 MB/s = " << std::setprecision(2) << ref
        << "x (about " << std::setprecision(0) << (ref - 1) * 100 << "% improvement)\n";
    report["reference_ratio"] = ref;

    const fs::path csv = cfg.metrics_out.empty() ? cfg.pool_dir / "bench.csv" : cfg.metrics_out;
    const fs::path json = cfg.report_out.empty() ? cfg.pool_dir / "bench.json" : cfg.report_out;
    {
        std::ofstream f(csv);
        write_metrics_csv(f, res.rows);
    }
    std::ofstream(json) << report.dump(2) << "\n";
    out << "metrics: " << csv.string() << "\nreport:  " << json.string() << "\n";
    return kExitOk;
}

struct VerifyOutcome {
    bool pass = false;
    double max_deviation = 0;
    std::optional<Index> first_mismatch;
};

inline VerifyOutcome compare_states(const DenseState& got, const DenseState& want, double tol)
{
    VerifyOutcome v;
    for (Index i = 0; i < want.size(); ++i) {
        const double d = std::abs(got[i] - want[i]);
        if (!(d <= tol) && !v.first_mismatch)
            v.first_mismatch = i;
        if (!(d <= v.max_deviation))
            v.max_deviation = d;  // NaN sticks
    }
    v.pass = !v.first_mismatch;
    return v;
}

inline int cmd_verify(const RunConfig& cfg, std::ostream& out, std::ostream& err)
{
    PoolManifest m;
    Circuit circuit;
    try {
        m = PoolManifest::load(cfg.pool_dir);
        if (m.n_qubits > cfg.oracle_qubit_cap) {
            err << "verify: " << m.n_qubits << " qubits exceeds the oracle cap of " << cfg.oracle_qubit_cap << "\n";
            return kExitUsage;
        }
        if (!cfg.circuit_path.empty()) {
            circuit = load_circuit(cfg.circuit_path, m.n_qubits);
        } else {
            std::mt19937_64 rng(cfg.seed);
            circuit = random_circuit(m.n_qubits, cfg.random_gates, rng);
        }
    } catch (const std::exception& e) {
        err << "verify: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        DenseState oracle = load_dense(m);
        for (const Gate& g : circuit.gates)
            apply_gate_dense(oracle, g);

        RunConfig rc = cfg;
        rc.reps = 1;
        run_circuit_local(m, circuit, local_config(rc, session_for(rc, m, cfg.cache_bytes)));

        if (cfg.corrupt_offset) {
            const std::uint64_t off = *cfg.corrupt_offset;
            if (off >= m.total_bytes()) {
                err << "verify: corrupt offset " << off << " beyond pool size\n";
                return kExitUsage;
            }
            const auto loc = m.locate(off / m.chunk_bytes);
            FileHandle f(m.shard_path(loc.shard), O_RDWR);
            std::byte b{};
            const std::uint64_t at = loc.offset + off % m.chunk_bytes;
            f.pread_all({&b, 1}, at);
            b ^= std::byte{0x5a};
            f.pwrite_all({&b, 1}, at);
            f.sync();
            out << "fault injection: flipped bits of byte " << off << "\n";
        }

        const DenseState got = load_dense(m);
        const VerifyOutcome v = compare_states(got, oracle, cfg.tolerance);
        out << "verify: " << circuit.gates.size() << " gate(s), " << cfg.worker_count << " worker(s), max deviation "
            << std::scientific << std::setprecision(3) << v.max_deviation << " (tolerance " << cfg.tolerance << ")\n";
        if (!v.pass) {
            out << "FAIL: first mismatching index " << *v.first_mismatch << "\n";
            return kExitFail;
        }
        out << "PASS\n";
        return kExitOk;
    } catch (const std::exception& e) {
        err << "verify: " << e.what() << "\n";
        return kExitFail;
    }
}

struct AnalyzeConfig {
    unsigned n_qubits = 40;
    std::string config_path;
    std::optional<analysis::WorkloadParams> workload;
    std::string compute = "GPU";
    std::string link = "100GbE";
    bool read_write = false;
    bool json = false;
};

inline int cmd_analyze(const AnalyzeConfig& cfg, std::ostream& out, std::ostream& err)
{
    try {
        analysis::AnalyzeInput in;
        in.n = cfg.n_qubits;
        if (!cfg.config_path.empty()) {
            std::ifstream f(cfg.config_path);
            if (!f) {
                err << "analyze: cannot open config '" << cfg.config_path << "'\n";
                return kExitUsage;
            }
            nlohmann::json j;
            try {
                f >> j;
            } catch (const nlohmann::json::exception& e) {
                err << "analyze: config is not valid JSON: " << e.what() << "\n";
                return kExitUsage;
            }
            in.table.merge(j);
        }
        in.workload = cfg.workload;
        if (in.workload)
            in.workload->validate();
        in.bottleneck_compute = cfg.compute;
        in.bottleneck_link = cfg.link;
        in.convention = cfg.read_write ? analysis::PassConvention::ReadWrite : analysis::PassConvention::ReadOnly;
        if (cfg.json)
            out << analysis::analyze_json(in).dump(2) << "\n";
        else
            analysis::print_analysis(out, in);
        return kExitOk;
    } catch (const std::exception& e) {
        err << "analyze: " << e.what() << "\n";
        return kExitUsage;
    }
}

}  // namespace tierqs::cli
