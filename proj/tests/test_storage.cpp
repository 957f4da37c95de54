#include "tierqs/storage.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <thread>

using namespace tierqs;
using tierqs::testing::marker_block;
using tierqs::testing::TempDir;

namespace {

std::vector<Amplitude> read_block(TieredPool& p, ChunkId id)
{
    std::vector<Amplitude> v(p.chunk_amps());
    p.read_chunk(id, v);
    return v;
}

bool same_bytes(std::span<const Amplitude> a, std::span<const Amplitude> b)
{
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size_bytes()) == 0;
}

BackendConfig direct() { return {}; }

BackendConfig emulated(NetworkProfile p)
{
    BackendConfig b;
    b.kind = BackendConfig::Kind::Emulated;
    b.profile = p;
    return b;
}

}  // namespace

// --- manifest / create_pool --------------------------------------------------

TEST(Manifest, GeometryArithmetic)
{
    PoolManifest m;
    m.n_qubits = 27;
    m.chunk_bytes = 1 << 20;
    EXPECT_EQ(m.total_bytes(), 2'147'483'648ull);
    EXPECT_EQ(m.chunk_count(), 2048u);
    m.shards = {{"a", 1ull << 30}, {"b", 1ull << 30}};
    EXPECT_NO_THROW(m.validate());
    EXPECT_EQ(m.locate(1023).shard, 0u);
    EXPECT_EQ(m.locate(1024).shard, 1u);
    EXPECT_EQ(m.locate(1025).offset, 1u << 20);
    EXPECT_THROW(m.locate(2048), StorageError);
}

TEST(Manifest, RejectsBadShardLengths)
{
    PoolManifest m;
    m.n_qubits = 4;
    m.chunk_bytes = 64;
    m.shards = {{"a", 128}, {"b", 64}};
    EXPECT_THROW(m.validate(), StorageError);  // sums to 192, not 256
    m.shards = {{"a", 96}, {"b", 160}};
    EXPECT_THROW(m.validate(), StorageError);  // 96 not a chunk multiple
    m.shards = {{"a", 128}, {"b", 128}};
    EXPECT_NO_THROW(m.validate());
}

TEST(Manifest, TextRoundTrip)
{
    TempDir d("manifest");
    const PoolManifest m = create_pool(10, 256, 4, d.path());
    const PoolManifest back = PoolManifest::load(d.path());
    EXPECT_EQ(back.n_qubits, 10u);
    EXPECT_EQ(back.chunk_bytes, 256u);
    EXPECT_EQ(back.shards, m.shards);
    EXPECT_TRUE(back.same_geometry(m));
    EXPECT_THROW(PoolManifest::from_text("format_version = 1\nn_qubits = 4\n", d.path()), StorageError);
}

TEST(CreatePool, FourQubitsSingleShard)
{
    TempDir d("p4");
    const PoolManifest m = create_pool(4, 32, 1, d.path());
    ASSERT_EQ(m.shards.size(), 1u);
    EXPECT_EQ(fs::file_size(m.shard_path(0)), 256u);
    EXPECT_TRUE(fs::exists(d / kManifestName));
}

TEST(CreatePool, TwentyFourQubitsTwoShards)
{
    TempDir d("p24");
    const PoolManifest m = create_pool(24, 1 << 20, 2, d.path());
    EXPECT_EQ(m.total_bytes(), 256ull << 20);
    EXPECT_EQ(fs::file_size(m.shard_path(0)), 128ull << 20);
    EXPECT_EQ(fs::file_size(m.shard_path(1)), 128ull << 20);
}

TEST(CreatePool, ValidatesArguments)
{
    TempDir d("bad");
    EXPECT_THROW(create_pool(4, 48, 1, d.path()), StorageError);   // not a power of two
    EXPECT_THROW(create_pool(4, 16, 1, d.path()), StorageError);   // below 32
    EXPECT_THROW(create_pool(4, 512, 1, d.path()), StorageError);  // larger than the state
    EXPECT_THROW(create_pool(4, 32, 3, d.path()), StorageError);   // uneven shards
    EXPECT_THROW(create_pool(0, 32, 1, d.path()), StorageError);
}

TEST(CreatePool, IncompatibleManifestNeedsOverwrite)
{
    TempDir d("compat");
    create_pool(6, 64, 2, d.path());
    EXPECT_THROW(create_pool(7, 64, 2, d.path()), StorageError);
    EXPECT_NO_THROW(create_pool(7, 64, 2, d.path(), true));
    EXPECT_EQ(PoolManifest::load(d.path()).n_qubits, 7u);
}

TEST(CreatePool, InsufficientSpaceIsReported)
{
    TempDir d("space");
    // 2^40 amplitudes need 16 TiB; no test machine has that free.
    EXPECT_THROW(create_pool(40, 1 << 20, 2, d.path()), StorageError);
}

// --- read / write / write_back ----------------------------------------------

TEST(TieredPool, FreshPoolReadsZero)
{
    TempDir d("zero");
    const PoolManifest m = create_pool(8, 128, 2, d.path());
    TieredPool p = open_pool(m, direct(), 1024);
    for (ChunkId id = 0; id < m.chunk_count(); ++id)
        for (const Amplitude& a : read_block(p, id))
            ASSERT_EQ(a, Amplitude{});
}

TEST(TieredPool, ReadYourWrite)
{
    TempDir d("ryw");
    const PoolManifest m = create_pool(8, 128, 2, d.path());
    TieredPool p = open_pool(m, direct(), 256);
    const auto block = marker_block(m.chunk_amps(), 7);
    p.write_chunk(5, block);
    EXPECT_TRUE(same_bytes(read_block(p, 5), block));
    EXPECT_TRUE(p.is_dirty(5));
}

TEST(TieredPool, SecondReadIsHit)
{
    TempDir d("hit");
    const PoolManifest m = create_pool(8, 128, 2, d.path());
    TieredPool p = open_pool(m, direct(), 1024);
    read_block(p, 3);
    const IoStats a = p.stats();
    read_block(p, 3);
    const IoStats b = p.stats();
    EXPECT_EQ(b.hits, a.hits + 1);
    EXPECT_EQ(b.misses, a.misses);
    EXPECT_EQ(b.read_ms, a.read_ms);
    EXPECT_EQ(b.bytes_read, a.bytes_read);
}

TEST(TieredPool, CleanEvictionIsFree)
{
    TempDir d("clean");
    const PoolManifest m = create_pool(8, 128, 1, d.path());
    TieredPool p = open_pool(m, direct(), 2 * 128);
    read_block(p, 0);
    read_block(p, 1);
    const IoStats a = p.stats();
    p.write_chunk(2, marker_block(m.chunk_amps(), 1));
    const IoStats b = p.stats();
    EXPECT_EQ(b.evictions, a.evictions + 1);
    EXPECT_EQ(b.dirty_evictions, a.dirty_evictions);
    EXPECT_EQ(b.writeback_ms, a.writeback_ms);
    EXPECT_EQ(b.bytes_written, a.bytes_written);
    EXPECT_FALSE(p.is_resident(0));
}

TEST(TieredPool, DirtyEvictionWritesBack)
{
    TempDir d("dirty");
    const PoolManifest m = create_pool(8, 128, 1, d.path());
    TieredPool p = open_pool(m, emulated({std::chrono::microseconds(200), 1e12, 1}), 2 * 128);
    const auto b0 = marker_block(m.chunk_amps(), 10);
    p.write_chunk(0, b0);
    p.write_chunk(1, marker_block(m.chunk_amps(), 11));
    const IoStats a = p.stats();
    p.write_chunk(2, marker_block(m.chunk_amps(), 12));
    const IoStats b = p.stats();
    EXPECT_EQ(b.dirty_evictions, a.dirty_evictions + 1);
    EXPECT_GT(b.writeback_ms, a.writeback_ms);
    EXPECT_EQ(b.bytes_written, a.bytes_written + 128);
    // The victim's bytes already reached the shard.
    EXPECT_TRUE(same_bytes(read_block(p, 0), b0));
}

TEST(TieredPool, WriteBackNoDirtyIsNoOp)
{
    TempDir d("noop");
    const PoolManifest m = create_pool(8, 128, 1, d.path());
    TieredPool p = open_pool(m, direct(), 1024);
    read_block(p, 0);
    const IoStats a = p.stats();
    p.write_back();
    const IoStats b = p.stats();
    EXPECT_EQ(a.writeback_ms, b.writeback_ms);
    EXPECT_EQ(a.bytes_written, b.bytes_written);
}

TEST(TieredPool, WriteBackAccountsDirtyChunks)
{
    TempDir d("wb");
    const PoolManifest m = create_pool(8, 128, 2, d.path());
    TieredPool p = open_pool(m, direct(), 16 * 128);
    for (ChunkId id : {1, 4, 9, 2, 7})
        p.write_chunk(id, marker_block(m.chunk_amps(), id));
    const IoStats a = p.stats();
    p.write_back();
    const IoStats b = p.stats();
    EXPECT_EQ(b.bytes_written - a.bytes_written, 5u * 128);
    for (ChunkId id : {1, 4, 9, 2, 7})
        EXPECT_FALSE(p.is_dirty(id));
    EXPECT_NO_THROW(p.invalidate());
    EXPECT_EQ(p.resident_bytes(), 0u);
}

TEST(TieredPool, InvalidateRefusesDirty)
{
    TempDir d("inv");
    const PoolManifest m = create_pool(6, 64, 1, d.path());
    TieredPool p = open_pool(m, direct(), 1024);
    p.write_chunk(0, marker_block(m.chunk_amps(), 0));
    EXPECT_THROW(p.invalidate(), StorageError);
}

TEST(TieredPool, DurableAfterReopen)
{
    TempDir d("dur");
    const PoolManifest m = create_pool(10, 256, 2, d.path());
    std::vector<std::vector<Amplitude>> blocks;
    {
        TieredPool p = open_pool(m, direct(), 4 * 256);
        for (ChunkId id = 0; id < m.chunk_count(); ++id) {
            blocks.push_back(marker_block(m.chunk_amps(), 100 + id));
            p.write_chunk(id, blocks.back());
        }
        p.write_back();
    }
    const PoolManifest again = PoolManifest::load(d.path());
    TieredPool cold = open_pool(again, direct(), 256);
    for (ChunkId id = 0; id < again.chunk_count(); ++id)
        EXPECT_TRUE(same_bytes(read_block(cold, id), blocks[id])) << "chunk " << id;
}

TEST(TieredPool, RejectsBadBuffersAndIds)
{
    TempDir d("args");
    const PoolManifest m = create_pool(6, 64, 1, d.path());
    TieredPool p = open_pool(m, direct(), 256);
    std::vector<Amplitude> wrong(3);
    EXPECT_THROW(p.read_chunk(0, wrong), StorageError);
    std::vector<Amplitude> ok(m.chunk_amps());
    EXPECT_THROW(p.read_chunk(m.chunk_count(), ok), StorageError);
    EXPECT_THROW(open_pool(m, direct(), 32), StorageError);
}

TEST(TieredPool, AccessGuard)
{
    TempDir d("guard");
    const PoolManifest m = create_pool(6, 64, 1, d.path());
    TieredPool p = open_pool(m, direct(), 256);
    p.set_access_guard([](ChunkId id) { return id < 2; });
    std::vector<Amplitude> buf(m.chunk_amps());
    EXPECT_NO_THROW(p.read_chunk(1, buf));
    EXPECT_THROW(p.read_chunk(2, buf), AccessViolation);
    EXPECT_THROW(p.write_chunk(3, buf), AccessViolation);
    p.set_access_guard({});
    EXPECT_NO_THROW(p.read_chunk(3, buf));
}

TEST(TieredPool, CapacityNeverExceededUnderRandomOps)
{
    TempDir d("cap");
    const PoolManifest m = create_pool(10, 128, 2, d.path());
    for (std::uint64_t cap : {128ull, 384ull, 1000ull, 4096ull}) {
        TieredPool p = open_pool(m, direct(), cap);
        std::mt19937_64 rng(cap);
        std::vector<Amplitude> buf(m.chunk_amps());
        for (int i = 0; i < 2000; ++i) {
            const ChunkId id = rng() % m.chunk_count();
            if (rng() % 3 == 0)
                p.write_chunk(id, buf);
            else
                p.read_chunk(id, buf);
            if (i % 97 == 0)
                p.write_back();
            ASSERT_LE(p.resident_bytes(), cap);
        }
    }
}

TEST(TieredPool, ShadowModelMatchesUnderRandomOps)
{
    TempDir d("shadow");
    const PoolManifest m = create_pool(9, 64, 2, d.path());
    std::vector<std::vector<Amplitude>> shadow(m.chunk_count(), std::vector<Amplitude>(m.chunk_amps()));
    TieredPool p = open_pool(m, direct(), 5 * 64);
    std::mt19937_64 rng(3);
    for (int i = 0; i < 3000; ++i) {
        const ChunkId id = rng() % m.chunk_count();
        if (rng() % 2) {
            shadow[id] = marker_block(m.chunk_amps(), rng());
            p.write_chunk(id, shadow[id]);
        } else {
            ASSERT_TRUE(same_bytes(read_block(p, id), shadow[id])) << "op " << i;
        }
    }
    p.write_back();
    const DenseState s = load_dense(m);
    for (ChunkId id = 0; id < m.chunk_count(); ++id)
        ASSERT_TRUE(same_bytes(s.amplitudes().subspan(id * m.chunk_amps(), m.chunk_amps()), shadow[id]));
}

// --- emulated remote -------------------------------------------------------------

TEST(EmulatedRemote, OneMiBMissCostsAtLeast1_8ms)
{
    TempDir d("lat");
    const PoolManifest m = create_pool(20, 1 << 20, 1, d.path());
    const NetworkProfile prof = NetworkProfile::classic_tcp();
    // 1 ms + 2^20 / 1.25e9 s
    const double expected_ms = 1.0 + (1 << 20) / 1.25e9 * 1e3;
    EXPECT_NEAR(expected_ms, 1.839, 1e-3);
    using ms_d = std::chrono::duration<double, std::milli>;
    EXPECT_NEAR(ms_d(prof.cost(1 << 20)).count(), expected_ms, 1e-6);

    auto be = std::make_unique<EmulatedRemoteBackend>(std::make_unique<SharedPoolBackend>(m), prof);
    std::vector<std::byte> buf(1 << 20);
    const auto t0 = std::chrono::steady_clock::now();
    be->read(3, buf);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    EXPECT_GE(ms, 1.8);
}

TEST(EmulatedRemote, ReplicationAmplifiesWriteBytes)
{
    TempDir d("rep");
    const PoolManifest m = create_pool(8, 256, 1, d.path());
    std::vector<std::byte> buf(256);
    for (unsigned r : {1u, 2u, 3u}) {
        EmulatedRemoteBackend be(std::make_unique<SharedPoolBackend>(m),
                                 {std::chrono::nanoseconds(0), 1e12, r});
        be.write(0, buf);
        be.write(1, buf);
        EXPECT_EQ(be.network_bytes_written(), 2u * 256 * r);
    }
}

TEST(EmulatedRemote, InvalidProfileRejected)
{
    TempDir d("prof");
    const PoolManifest m = create_pool(6, 64, 1, d.path());
    auto mk = [&](NetworkProfile p) {
        return EmulatedRemoteBackend(std::make_unique<SharedPoolBackend>(m), p);
    };
    EXPECT_THROW(mk({std::chrono::nanoseconds(-1), 1e9, 1}), std::invalid_argument);
    EXPECT_THROW(mk({std::chrono::nanoseconds(0), 0.0, 1}), std::invalid_argument);
    EXPECT_THROW(mk({std::chrono::nanoseconds(0), 1e9, 0}), std::invalid_argument);
}

TEST(EmulatedRemote, IdentityProfileAddsNothing)
{
    NetworkProfile p;  // latency 0, bandwidth infinite, replication 1
    EXPECT_EQ(p.cost(1 << 30).count(), 0);
}

TEST(BackendEquivalence, SameOpsSameBytes)
{
    TempDir d1("eq1"), d2("eq2");
    const PoolManifest m1 = create_pool(9, 128, 2, d1.path());
    const PoolManifest m2 = create_pool(9, 128, 2, d2.path());
    TieredPool a = open_pool(m1, direct(), 3 * 128);
    TieredPool b = open_pool(m2, emulated({std::chrono::microseconds(20), 5e9, 2}), 3 * 128);
    std::mt19937_64 rng(11);
    for (int i = 0; i < 400; ++i) {
        const ChunkId id = rng() % m1.chunk_count();
        if (rng() % 2) {
            const auto blk = marker_block(m1.chunk_amps(), rng());
            a.write_chunk(id, blk);
            b.write_chunk(id, blk);
        } else {
            ASSERT_TRUE(same_bytes(read_block(a, id), read_block(b, id)));
        }
    }
    a.write_back();
    b.write_back();
    for (std::size_t s = 0; s < 2; ++s) {
        std::ifstream f1(m1.shard_path(s), std::ios::binary), f2(m2.shard_path(s), std::ios::binary);
        const std::string c1((std::istreambuf_iterator<char>(f1)), {});
        const std::string c2((std::istreambuf_iterator<char>(f2)), {});
        EXPECT_EQ(c1, c2) << "shard " << s;
    }
    EXPECT_GT(b.stats().read_ms, 0.0);
}

TEST(Concurrency, DisjointClientsDoNotCorrupt)
{
    TempDir d("conc");
    const PoolManifest m = create_pool(12, 256, 2, d.path());
    const std::uint64_t chunks = m.chunk_count();  // 256
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 4; ++trial) {
        // random disjoint assignment of chunks to 4 clients
        std::vector<unsigned> owner(chunks);
        for (auto& o : owner)
            o = rng() % 4;
        std::vector<std::vector<std::vector<Amplitude>>> expect(4, std::vector<std::vector<Amplitude>>(chunks));
        std::vector<std::thread> ts;
        for (unsigned c = 0; c < 4; ++c) {
            ts.emplace_back([&, c, seed = rng()] {
                TieredPool p = open_pool(m, direct(), 7 * 256);
                std::mt19937_64 r(seed);
                std::vector<Amplitude> buf(m.chunk_amps());
                for (int i = 0; i < 600; ++i) {
                    const ChunkId id = r() % chunks;
                    if (owner[id] != c)
                        continue;
                    if (r() % 2) {
                        expect[c][id] = marker_block(m.chunk_amps(), r());
                        p.write_chunk(id, expect[c][id]);
                    } else {
                        p.read_chunk(id, buf);
                    }
                }
                p.write_back();
            });
        }
        for (auto& t : ts)
            t.join();
        TieredPool check = open_pool(m, direct(), 256);
        for (ChunkId id = 0; id < chunks; ++id) {
            const auto& want = expect[owner[id]][id];
            if (!want.empty()) {
                ASSERT_TRUE(same_bytes(read_block(check, id), want)) << "trial " << trial << " chunk " << id;
            }
        }
    }
}

TEST(Helpers, BasisStateAndNorm)
{
    TempDir d("basis");
    const PoolManifest m = create_pool(10, 128, 2, d.path());
    write_basis_state(m, 700);
    const DenseState s = load_dense(m);
    EXPECT_EQ(s[700], Amplitude(1.0, 0.0));
    EXPECT_DOUBLE_EQ(pool_norm_sq(m), 1.0);
    EXPECT_THROW(write_basis_state(m, 1024), std::invalid_argument);
}
