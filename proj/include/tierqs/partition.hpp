#pragma once

// Per-gate work partitioning.
//
// A gate on target t pairs index i with i + 2^t. With chunks of L amplitudes:
//   2^t <  L  every pair lives inside one chunk; a work unit is one chunk.
//   2^t >= L  chunk c pairs with chunk c + 2^t/L; a work unit is that pair.
// Work units are numbered 0..unit_count-1 and handed out as contiguous,
// near-equal unit ranges, so every worker's chunk set is pair-closed.

#include "tierqs/statecore.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace tierqs {

class PartitionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct WorkUnit {
    std::uint64_t lo = 0;
    std::optional<std::uint64_t> hi;  // set in cross-chunk mode

    bool operator==(const WorkUnit&) const = default;
};

class PairGeometry {
public:
    PairGeometry(unsigned n_qubits, unsigned target, std::uint64_t chunk_bytes)
        : n_(n_qubits), t_(target), chunk_amps_(chunk_bytes / kAmplitudeBytes)
    {
        if (n_ == 0 || n_ > kMaxQubits)
            throw PartitionError("n_qubits must be in [1, " + std::to_string(kMaxQubits) + "]");
        if (t_ >= n_)
            throw PartitionError("target qubit " + std::to_string(t_) + " >= n_qubits " + std::to_string(n_));
        if (!is_power_of_two(chunk_bytes) || chunk_bytes < 2 * kAmplitudeBytes)
            throw PartitionError("chunk_bytes must be a power of two >= 32, got " + std::to_string(chunk_bytes));
        if (chunk_amps_ > pow2(n_))
            throw PartitionError("chunk of " + std::to_string(chunk_amps_) + " amplitudes exceeds the " +
                                 std::to_string(pow2(n_)) + "-amplitude state");
    }

    unsigned n_qubits() const { return n_; }
    unsigned target() const { return t_; }
    Index chunk_amps() const { return chunk_amps_; }
    std::uint64_t chunk_count() const { return pow2(n_) / chunk_amps_; }
    bool cross_chunk() const { return pow2(t_) >= chunk_amps_; }
    /// Chunk distance between partners in cross-chunk mode.
    std::uint64_t chunk_stride() const { return cross_chunk() ? pow2(t_) / chunk_amps_ : 0; }
    std::uint64_t unit_count() const { return cross_chunk() ? chunk_count() / 2 : chunk_count(); }

    WorkUnit unit(std::uint64_t u) const
    {
        if (u >= unit_count())
            throw PartitionError("work unit " + std::to_string(u) + " out of range");
        if (!cross_chunk())
            return {u, std::nullopt};
        // insert a zero bit at the stride position
        const std::uint64_t s = chunk_stride();
        const std::uint64_t lo = ((u & ~(s - 1)) << 1) | (u & (s - 1));
        return {lo, lo + s};
    }

    /// Inverse of unit(): the work unit that touches `chunk`.
    std::uint64_t unit_of(std::uint64_t chunk) const
    {
        if (chunk >= chunk_count())
            throw PartitionError("chunk " + std::to_string(chunk) + " out of range");
        if (!cross_chunk())
            return chunk;
        const std::uint64_t s = chunk_stride();
        const std::uint64_t lo = chunk & ~s;
        return ((lo >> 1) & ~(s - 1)) | (lo & (s - 1));
    }

private:
    unsigned n_;
    unsigned t_;
    Index chunk_amps_;
};

/// Half-open range of work units owned by one worker for one gate. In
/// intra-chunk mode units are chunks, so [unit_lo, unit_hi) is a ChunkId range.
struct WorkRange {
    int gate_seq = 0;
    std::uint64_t unit_lo = 0;
    std::uint64_t unit_hi = 0;

    std::uint64_t size() const { return unit_hi - unit_lo; }
    bool empty() const { return unit_hi == unit_lo; }
    bool operator==(const WorkRange&) const = default;
};

inline std::vector<WorkRange> partition_pairs(const PairGeometry& geo, unsigned worker_count, int gate_seq = 0)
{
    if (!is_power_of_two(worker_count))
        throw PartitionError("worker count must be a power of two, got " + std::to_string(worker_count));
    const std::uint64_t units = geo.unit_count();
    const std::uint64_t base = units / worker_count;
    const std::uint64_t extra = units % worker_count;
    std::vector<WorkRange> out;
    out.reserve(worker_count);
    std::uint64_t next = 0;
    for (unsigned w = 0; w < worker_count; ++w) {
        const std::uint64_t n = base + (w < extra ? 1 : 0);
        out.push_back({gate_seq, next, next + n});
        next += n;
    }
    return out;
}

inline std::vector<WorkRange> partition_pairs(unsigned n_qubits, unsigned target, std::uint64_t chunk_bytes,
                                              unsigned worker_count, int gate_seq = 0)
{
    return partition_pairs(PairGeometry(n_qubits, target, chunk_bytes), worker_count, gate_seq);
}

inline std::vector<WorkUnit> expand_units(const PairGeometry& geo, const WorkRange& r)
{
    if (r.unit_lo > r.unit_hi || r.unit_hi > geo.unit_count())
        throw PartitionError("work range [" + std::to_string(r.unit_lo) + ", " + std::to_string(r.unit_hi) +
                             ") exceeds " + std::to_string(geo.unit_count()) + " units");
    std::vector<WorkUnit> units;
    units.reserve(r.size());
    for (std::uint64_t u = r.unit_lo; u < r.unit_hi; ++u)
        units.push_back(geo.unit(u));
    return units;
}

/// Every chunk id the range touches, in unit order.
inline std::vector<std::uint64_t> owned_chunks(const PairGeometry& geo, const WorkRange& r)
{
    std::vector<std::uint64_t> ids;
    for (const WorkUnit& u : expand_units(geo, r)) {
        ids.push_back(u.lo);
        if (u.hi)
            ids.push_back(*u.hi);
    }
    return ids;
}

}  // namespace tierqs
