#pragma once

// Streaming gate executor and the metrics it produces.
//
// For one worker and one gate, execute_range walks the owned work units,
// reading each chunk (or chunk pair) through the tiered pool, applying the
// kernel, writing the result back into the cache, and finally flushing. In
// pipelined mode a prefetch thread reads unit k+1 while unit k is computed;
// the two stages hand buffers over through two slots.

#include "tierqs/partition.hpp"
#include "tierqs/storage.hpp"

#include <condition_variable>
#include <exception>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>

namespace tierqs {

using NodeId = unsigned;

inline constexpr double kMiB = 1024.0 * 1024.0;

inline double speed_mb_s(std::uint64_t bytes, double total_ms)
{
    return total_ms > 0 ? (static_cast<double>(bytes) / kMiB) / (total_ms / 1000.0) : 0.0;
}

struct GateMetrics {
    NodeId node = 0;
    int gate_seq = 0;
    std::string gate_label;
    double compute_ms = 0;
    double read_ms = 0;
    double write_ms = 0;
    double writeback_ms = 0;
    double total_ms = 0;
    std::uint64_t bytes_processed = 0;
    double speed_mb_s = 0;
    // exactly-once bookkeeping
    std::uint64_t chunks_read = 0;
    std::uint64_t chunks_written = 0;
};

struct RoundMetrics {
    int round_seq = 0;
    double total_ms = 0;
    std::uint64_t bytes_processed = 0;
    double aggregate_speed_mb_s = 0;
    // constituent sums over every worker row in the round
    double compute_ms = 0;
    double read_ms = 0;
    double write_ms = 0;
    double writeback_ms = 0;
    std::size_t rows = 0;
};

struct EngineEvent {
    enum class Kind { Read, Write, Flushed };
    Kind kind;
    NodeId node;
    int gate_seq;
    std::uint64_t chunk;  // unused for Flushed
};

struct ExecuteOptions {
    bool sequential = false;
    std::function<void(const EngineEvent&)> on_event;
};

namespace detail {

struct UnitBuffers {
    std::vector<Amplitude> lo;
    std::vector<Amplitude> hi;
};

inline void read_unit(TieredPool& pool, const WorkUnit& u, UnitBuffers& buf, const ExecuteOptions& opts,
                      NodeId node, int gate_seq)
{
    pool.read_chunk(u.lo, buf.lo);
    if (opts.on_event)
        opts.on_event({EngineEvent::Kind::Read, node, gate_seq, u.lo});
    if (u.hi) {
        pool.read_chunk(*u.hi, buf.hi);
        if (opts.on_event)
            opts.on_event({EngineEvent::Kind::Read, node, gate_seq, *u.hi});
    }
}

inline void write_unit(TieredPool& pool, const WorkUnit& u, const UnitBuffers& buf, const ExecuteOptions& opts,
                       NodeId node, int gate_seq)
{
    pool.write_chunk(u.lo, buf.lo);
    if (opts.on_event)
        opts.on_event({EngineEvent::Kind::Write, node, gate_seq, u.lo});
    if (u.hi) {
        pool.write_chunk(*u.hi, buf.hi);
        if (opts.on_event)
            opts.on_event({EngineEvent::Kind::Write, node, gate_seq, *u.hi});
    }
}

inline void compute_unit(const WorkUnit& u, UnitBuffers& buf, const Gate& gate, Index chunk_amps)
{
    if (u.hi)
        apply_gate_chunkpair(buf.lo, buf.hi, gate, u.lo * chunk_amps);
    else
        apply_gate_chunk(buf.lo, gate, u.lo * chunk_amps);
}

/// Bounded two-slot handoff between the prefetch and compute stages.
class SlotRing {
public:
    explicit SlotRing(Index chunk_amps, bool pairs)
    {
        for (auto& s : slots_) {
            s.buf.lo.resize(chunk_amps);
            if (pairs)
                s.buf.hi.resize(chunk_amps);
        }
    }

    UnitBuffers& acquire_empty(std::size_t k)
    {
        Slot& s = slots_[k % 2];
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return !s.full || aborted_; });
        if (aborted_)
            throw Aborted{};
        return s.buf;
    }

    void publish(std::size_t k)
    {
        {
            std::lock_guard lock(mu_);
            slots_[k % 2].full = true;
        }
        cv_.notify_all();
    }

    UnitBuffers& acquire_full(std::size_t k)
    {
        Slot& s = slots_[k % 2];
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return s.full || error_; });
        if (!s.full && error_)
            std::rethrow_exception(error_);
        return s.buf;
    }

    void release(std::size_t k)
    {
        {
            std::lock_guard lock(mu_);
            slots_[k % 2].full = false;
        }
        cv_.notify_all();
    }

    void fail(std::exception_ptr e)
    {
        {
            std::lock_guard lock(mu_);
            error_ = e;
        }
        cv_.notify_all();
    }

    void abort()
    {
        {
            std::lock_guard lock(mu_);
            aborted_ = true;
        }
        cv_.notify_all();
    }

    struct Aborted {};

private:
    struct Slot {
        UnitBuffers buf;
        bool full = false;
    };
    std::array<Slot, 2> slots_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::exception_ptr error_;
    bool aborted_ = false;
};

}  // namespace detail

/// Applies `gate` to the units in `range`, then flushes. The caller
/// guarantees the range is pair-closed for the gate (partition_pairs does).
inline GateMetrics execute_range(TieredPool& pool, const PairGeometry& geo, const WorkRange& range, const Gate& gate,
                                 NodeId node = 0, const ExecuteOptions& opts = {})
{
    GateMetrics m;
    m.node = node;
    m.gate_seq = range.gate_seq;
    m.gate_label = gate.label();
    if (range.empty())
        return m;
    if (geo.target() != gate.target)
        throw PartitionError("work range geometry targets qubit " + std::to_string(geo.target()) + ", gate targets " +
                             std::to_string(gate.target));
    if (geo.chunk_amps() != pool.chunk_amps())
        throw PartitionError("work range geometry chunk size differs from the pool's");
    validate_gate(gate, geo.n_qubits());

    const std::vector<WorkUnit> units = expand_units(geo, range);
    const IoStats before = pool.stats();
    const Index chunk_amps = geo.chunk_amps();
    double compute_ms = 0;
    const auto t0 = detail::Clock::now();

    if (opts.sequential) {
        detail::UnitBuffers buf{std::vector<Amplitude>(chunk_amps),
                                std::vector<Amplitude>(geo.cross_chunk() ? chunk_amps : 0)};
        for (const WorkUnit& u : units) {
            detail::read_unit(pool, u, buf, opts, node, range.gate_seq);
            const auto c0 = detail::Clock::now();
            detail::compute_unit(u, buf, gate, chunk_amps);
            compute_ms += detail::ms_since(c0);
            detail::write_unit(pool, u, buf, opts, node, range.gate_seq);
        }
    } else {
        detail::SlotRing ring(chunk_amps, geo.cross_chunk());
        std::thread prefetch([&] {
            try {
                for (std::size_t k = 0; k < units.size(); ++k) {
                    detail::UnitBuffers& b = ring.acquire_empty(k);
                    detail::read_unit(pool, units[k], b, opts, node, range.gate_seq);
                    ring.publish(k);
                }
            } catch (const detail::SlotRing::Aborted&) {
            } catch (...) {
                ring.fail(std::current_exception());
            }
        });
        try {
            for (std::size_t k = 0; k < units.size(); ++k) {
                detail::UnitBuffers& b = ring.acquire_full(k);
                const auto c0 = detail::Clock::now();
                detail::compute_unit(units[k], b, gate, chunk_amps);
                compute_ms += detail::ms_since(c0);
                detail::write_unit(pool, units[k], b, opts, node, range.gate_seq);
                ring.release(k);
            }
        } catch (...) {
            ring.abort();
            prefetch.join();
            throw;
        }
        prefetch.join();
    }

    pool.write_back();
    if (opts.on_event)
        opts.on_event({EngineEvent::Kind::Flushed, node, range.gate_seq, 0});
    m.total_ms = detail::ms_since(t0);

    const IoStats after = pool.stats();
    m.compute_ms = compute_ms;
    m.read_ms = after.read_ms - before.read_ms;
    m.write_ms = after.write_ms - before.write_ms;
    m.writeback_ms = after.writeback_ms - before.writeback_ms;
    m.chunks_read = after.read_calls - before.read_calls;
    m.chunks_written = after.write_calls - before.write_calls;
    m.bytes_processed = m.chunks_read * pool.chunk_bytes();
    m.speed_mb_s = speed_mb_s(m.bytes_processed, m.total_ms);
    return m;
}

class MetricsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Aggregates one round. Every node in [0, worker_count) must have reported.
inline RoundMetrics aggregate_round(std::span<const GateMetrics> rows, double round_wall_ms, unsigned worker_count,
                                    int round_seq = 0)
{
    std::vector<bool> seen(worker_count, false);
    RoundMetrics r;
    r.round_seq = round_seq;
    r.total_ms = round_wall_ms;
    for (const GateMetrics& g : rows) {
        if (g.node >= worker_count)
            throw MetricsError("report from node " + std::to_string(g.node) + " but only " +
                               std::to_string(worker_count) + " workers exist");
        seen[g.node] = true;
        r.bytes_processed += g.bytes_processed;
        r.compute_ms += g.compute_ms;
        r.read_ms += g.read_ms;
        r.write_ms += g.write_ms;
        r.writeback_ms += g.writeback_ms;
        ++r.rows;
    }
    for (unsigned w = 0; w < worker_count; ++w)
        if (!seen[w])
            throw MetricsError("round " + std::to_string(round_seq) + ": missing report from node " +
                               std::to_string(w));
    r.aggregate_speed_mb_s = speed_mb_s(r.bytes_processed, round_wall_ms);
    return r;
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr const char* kMetricsCsvHeader =
    "framework,node,gate_seq,gate_label,compute_ms,read_ms,write_ms,writeback_ms,total_ms,speed_mb_s,bytes,rep";

/// One CSV line: a node-gate row, or a round row (node == "round").
struct MetricsRow {
    std::string framework;
    std::string node;
    int gate_seq = 0;
    std::string gate_label;
    double compute_ms = 0;
    double read_ms = 0;
    double write_ms = 0;
    double writeback_ms = 0;
    double total_ms = 0;
    double speed_mb_s = 0;
    std::uint64_t bytes = 0;
    int rep = 0;

    bool is_round() const { return node == "round"; }
};

inline MetricsRow to_row(const GateMetrics& g, const std::string& framework, int rep)
{
    return {framework,    std::to_string(g.node), g.gate_seq, g.gate_label, g.compute_ms,      g.read_ms,
            g.write_ms,   g.writeback_ms,         g.total_ms, g.speed_mb_s, g.bytes_processed, rep};
}

inline MetricsRow to_row(const RoundMetrics& r, const std::string& framework, int rep)
{
    return {framework,  "round",        -1,         "Round-" + std::to_string(r.round_seq),
            r.compute_ms, r.read_ms,    r.write_ms, r.writeback_ms,
            r.total_ms, r.aggregate_speed_mb_s, r.bytes_processed, rep};
}

inline void write_metrics_csv(std::ostream& out, std::span<const MetricsRow> rows, bool header = true)
{
    if (header)
        out << kMetricsCsvHeader << "\n";
    const auto flags = out.flags();
    const auto prec = out.precision();
    out << std::fixed << std::setprecision(3);
    for (const MetricsRow& r : rows) {
        out << r.framework << ',' << r.node << ',' << r.gate_seq << ',' << r.gate_label << ',' << r.compute_ms << ','
            << r.read_ms << ',' << r.write_ms << ',' << r.writeback_ms << ',' << r.total_ms << ',' << r.speed_mb_s
            << ',' << r.bytes << ',' << r.rep << "\n";
    }
    out.flags(flags);
    out.precision(prec);
}

inline std::vector<MetricsRow> read_metrics_csv(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line) || line != kMetricsCsvHeader)
        throw MetricsError("metrics csv: unexpected header '" + line + "'");
    std::vector<MetricsRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty())
            continue;
        std::vector<std::string> f;
        std::size_t start = 0;
        for (;;) {
            const auto comma = line.find(',', start);
            f.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos)
                break;
            start = comma + 1;
        }
        if (f.size() != 12)
            throw MetricsError("metrics csv line " + std::to_string(lineno) + ": expected 12 fields, got " +
                               std::to_string(f.size()));
        try {
            rows.push_back({f[0], f[1], std::stoi(f[2]), f[3], std::stod(f[4]), std::stod(f[5]), std::stod(f[6]),
                            std::stod(f[7]), std::stod(f[8]), std::stod(f[9]), std::stoull(f[10]),
                            std::stoi(f[11])});
        } catch (const std::logic_error&) {
            throw MetricsError("metrics csv line " + std::to_string(lineno) + ": malformed number");
        }
    }
    return rows;
}

}  // namespace tierqs
