#include "tierqs/partition.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

using namespace tierqs;

namespace {

// Owner of every chunk for one gate, or a failure message.
std::vector<int> chunk_owners(const PairGeometry& geo, const std::vector<WorkRange>& ranges, std::string& err)
{
    std::vector<int> owner(geo.chunk_count(), -1);
    for (std::size_t w = 0; w < ranges.size(); ++w) {
        for (std::uint64_t c : owned_chunks(geo, ranges[w])) {
            if (owner[c] != -1) {
                err = "chunk " + std::to_string(c) + " owned twice";
                return owner;
            }
            owner[c] = static_cast<int>(w);
        }
    }
    for (std::uint64_t c = 0; c < owner.size(); ++c)
        if (owner[c] == -1)
            err = "chunk " + std::to_string(c) + " unowned";
    return owner;
}

// Brute force: every amplitude pair must sit inside a single worker's chunks.
std::string check_geometry(unsigned n, unsigned t, std::uint64_t chunk_bytes, unsigned workers)
{
    const PairGeometry geo(n, t, chunk_bytes);
    const auto ranges = partition_pairs(geo, workers);
    if (ranges.size() != workers)
        return "wrong range count";
    std::string err;
    const auto owner = chunk_owners(geo, ranges, err);
    if (!err.empty())
        return err;
    const Index L = geo.chunk_amps();
    for (Index i = 0; i < pow2(n); ++i) {
        if (bit_is_set(i, t))
            continue;
        const auto [a, b] = pair_index(i, t);
        if (owner[a / L] != owner[b / L])
            return "pair (" + std::to_string(a) + "," + std::to_string(b) + ") straddles workers";
    }
    std::uint64_t lo = UINT64_MAX, hi = 0;
    for (const auto& r : ranges) {
        lo = std::min(lo, r.size());
        hi = std::max(hi, r.size());
    }
    if (hi - lo > 1)
        return "unbalanced ranges";
    return {};
}

}  // namespace

TEST(Partition, TwentySevenQubitsTargetThirteenSplitsInHalves)
{
    const std::uint64_t chunk = 1 << 20;
    const PairGeometry geo(27, 13, chunk);
    EXPECT_FALSE(geo.cross_chunk());  // stride 8192 < 65,536 amplitudes per chunk
    const auto r = partition_pairs(geo, 2);
    ASSERT_EQ(r.size(), 2u);
    const Index L = geo.chunk_amps();
    EXPECT_EQ(r[0].unit_lo * L, 0u);
    EXPECT_EQ(r[0].unit_hi * L - 1, 67'108'863u);
    EXPECT_EQ(r[1].unit_lo * L, 67'108'864u);
    EXPECT_EQ(r[1].unit_hi * L - 1, 134'217'727u);
}

TEST(Partition, FourQubitsCrossChunkPairs)
{
    // chunks of 4 amplitudes: 0-3, 4-7, 8-11, 12-15; stride 8 pairs 0<->2 and 1<->3
    const PairGeometry geo(4, 3, 4 * kAmplitudeBytes);
    ASSERT_TRUE(geo.cross_chunk());
    EXPECT_EQ(geo.chunk_stride(), 2u);
    const auto r = partition_pairs(geo, 2);
    const auto w0 = expand_units(geo, r[0]);
    const auto w1 = expand_units(geo, r[1]);
    ASSERT_EQ(w0.size(), 1u);
    ASSERT_EQ(w1.size(), 1u);
    EXPECT_EQ(w0[0], (WorkUnit{0, 2}));
    EXPECT_EQ(w1[0], (WorkUnit{1, 3}));

    // brute-force the chunk pairs from amplitude pairs
    std::set<std::pair<Index, Index>> want;
    for (Index i = 0; i < 16; ++i)
        if (!bit_is_set(i, 3))
            want.insert({i / 4, (i + 8) / 4});
    EXPECT_EQ(want, (std::set<std::pair<Index, Index>>{{0, 2}, {1, 3}}));
}

TEST(Partition, SingleWorkerCoversEverything)
{
    for (unsigned t = 0; t < 10; ++t) {
        const PairGeometry geo(10, t, 64);
        const auto r = partition_pairs(geo, 1);
        ASSERT_EQ(r.size(), 1u);
        EXPECT_EQ(r[0].unit_lo, 0u);
        EXPECT_EQ(r[0].unit_hi, geo.unit_count());
        EXPECT_EQ(owned_chunks(geo, r[0]).size(), geo.chunk_count());
    }
}

TEST(Partition, RejectsNonPowerOfTwoWorkers)
{
    const PairGeometry geo(10, 2, 64);
    for (unsigned w : {0u, 3u, 5u, 6u, 12u})
        EXPECT_THROW(partition_pairs(geo, w), PartitionError) << w;
}

TEST(Partition, RejectsBadGeometry)
{
    EXPECT_THROW(PairGeometry(10, 10, 64), PartitionError);
    EXPECT_THROW(PairGeometry(4, 1, 512), PartitionError);
    EXPECT_THROW(PairGeometry(4, 1, 48), PartitionError);
    EXPECT_THROW(PairGeometry(0, 0, 32), PartitionError);
}

TEST(Partition, MoreWorkersThanUnitsLeavesEmptyRanges)
{
    const PairGeometry geo(2, 1, 32);  // 2 chunks of 2 amps, one cross unit
    const auto r = partition_pairs(geo, 4);
    ASSERT_EQ(r.size(), 4u);
    EXPECT_EQ(r[0].size(), 1u);
    for (int w = 1; w < 4; ++w)
        EXPECT_TRUE(r[w].empty());
    EXPECT_EQ(check_geometry(2, 1, 32, 4), "");
}

TEST(Partition, UnitOfInvertsUnit)
{
    for (unsigned t = 0; t < 9; ++t) {
        const PairGeometry geo(9, t, 32);
        for (std::uint64_t u = 0; u < geo.unit_count(); ++u) {
            const WorkUnit w = geo.unit(u);
            EXPECT_EQ(geo.unit_of(w.lo), u);
            if (w.hi) {
                EXPECT_EQ(geo.unit_of(*w.hi), u);
            }
        }
    }
}

TEST(Partition, ExhaustiveUpToSixteenQubits)
{
    std::size_t checked = 0;
    for (unsigned n = 1; n <= 16; ++n) {
        for (unsigned t = 0; t < n; ++t) {
            for (unsigned workers : {1u, 2u, 4u}) {
                // every chunk size from 2 amplitudes up to the whole state
                for (unsigned lc = 1; lc <= n; ++lc) {
                    const std::uint64_t c = pow2(lc) * kAmplitudeBytes;
                    ASSERT_EQ(check_geometry(n, t, c, workers), "")
                        << "n=" << n << " t=" << t << " chunk=" << c << " workers=" << workers;
                    ++checked;
                }
            }
        }
    }
    EXPECT_EQ(checked, 3u * 1496u);  // 3 worker counts x sum over n of n^2
}

TEST(Partition, RandomGeometriesArePairClosed)
{
    std::mt19937 rng(2024);
    for (int i = 0; i < 200; ++i) {
        const unsigned n = 1 + rng() % 14;
        const unsigned t = rng() % n;
        const unsigned log_chunk = 1 + rng() % n;  // amplitudes per chunk = 2^log_chunk
        const unsigned workers = 1u << (rng() % 4);
        ASSERT_EQ(check_geometry(n, t, pow2(log_chunk) * kAmplitudeBytes, workers), "")
            << "n=" << n << " t=" << t << " log_chunk=" << log_chunk << " workers=" << workers;
    }
}

TEST(Partition, ExpandRejectsOutOfRange)
{
    const PairGeometry geo(6, 1, 64);
    EXPECT_THROW(expand_units(geo, {0, 0, geo.unit_count() + 1}), PartitionError);
    EXPECT_THROW(geo.unit(geo.unit_count()), PartitionError);
}
