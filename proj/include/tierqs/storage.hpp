#pragma once

// Tiered chunk storage.
//
// A pool is a set of shard files holding the raw state (2^n * 16 bytes in
// index order) plus a text manifest describing the geometry. Every worker
// opens its own TieredPool over the same shard files: a bounded LRU
// write-back cache in front of a ChunkBackend. Two backends exist:
//
//   SharedPoolBackend     positional reads/writes straight into the shards
//   EmulatedRemoteBackend wraps another backend and charges a network cost
//                         (latency + bytes / bandwidth) per request
//
// Workers never coordinate through this layer. Callers guarantee disjoint
// chunk ownership between barriers.

#include "tierqs/statecore.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <cerrno>
#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

namespace tierqs {

namespace fs = std::filesystem;

class StorageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a worker touches a chunk it does not own for the current gate.
class AccessViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

using ChunkId = std::uint64_t;

inline constexpr int kManifestVersion = 1;
inline constexpr const char* kManifestName = "pool.manifest";

struct ShardInfo {
    fs::path path;  // relative to the manifest directory unless absolute
    std::uint64_t length = 0;

    bool operator==(const ShardInfo&) const = default;
};

struct PoolManifest {
    int format_version = kManifestVersion;
    unsigned n_qubits = 0;
    std::uint64_t chunk_bytes = 0;
    std::vector<ShardInfo> shards;
    fs::path directory;  // where the manifest lives; not serialized

    std::uint64_t total_bytes() const { return pow2(n_qubits) * kAmplitudeBytes; }
    std::uint64_t chunk_count() const { return total_bytes() / chunk_bytes; }
    Index chunk_amps() const { return chunk_bytes / kAmplitudeBytes; }

    fs::path shard_path(std::size_t s) const
    {
        const fs::path& p = shards.at(s).path;
        return p.is_absolute() ? p : directory / p;
    }

    struct Location {
        std::size_t shard;
        std::uint64_t offset;
    };

    Location locate(ChunkId id) const
    {
        if (id >= chunk_count())
            throw StorageError("chunk " + std::to_string(id) + " out of range (pool has " +
                               std::to_string(chunk_count()) + " chunks)");
        std::uint64_t byte = id * chunk_bytes;
        for (std::size_t s = 0; s < shards.size(); ++s) {
            if (byte < shards[s].length)
                return {s, byte};
            byte -= shards[s].length;
        }
        throw StorageError("chunk " + std::to_string(id) + " is not covered by any shard");
    }

    void validate() const
    {
        if (format_version != kManifestVersion)
            throw StorageError("unsupported manifest format_version " + std::to_string(format_version));
        if (n_qubits == 0 || n_qubits > kMaxQubits)
            throw StorageError("manifest: n_qubits must be in [1, " + std::to_string(kMaxQubits) + "]");
        if (!is_power_of_two(chunk_bytes) || chunk_bytes < 32)
            throw StorageError("manifest: chunk_bytes must be a power of two >= 32, got " +
                               std::to_string(chunk_bytes));
        if (chunk_bytes > total_bytes())
            throw StorageError("manifest: chunk_bytes " + std::to_string(chunk_bytes) + " exceeds state size " +
                               std::to_string(total_bytes()));
        if (shards.empty())
            throw StorageError("manifest: no shards");
        std::uint64_t sum = 0;
        for (const ShardInfo& s : shards) {
            if (s.length == 0 || s.length % chunk_bytes != 0)
                throw StorageError("manifest: shard '" + s.path.string() + "' length " + std::to_string(s.length) +
                                   " is not a positive multiple of chunk_bytes");
            sum += s.length;
        }
        if (sum != total_bytes())
            throw StorageError("manifest: shard lengths sum to " + std::to_string(sum) + ", expected " +
                               std::to_string(total_bytes()));
    }

    std::string to_text() const
    {
        std::ostringstream out;
        out << "# tierqs pool manifest\n";
        out << "format_version = " << format_version << "\n";
        out << "n_qubits = " << n_qubits << "\n";
        out << "chunk_bytes = " << chunk_bytes << "\n";
        for (const ShardInfo& s : shards)
            out << "shard = " << s.length << " " << s.path.string() << "\n";
        return out.str();
    }

    static PoolManifest from_text(const std::string& text, const fs::path& directory)
    {
        PoolManifest m;
        m.format_version = 0;
        m.directory = directory;
        std::istringstream in(text);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#')
                continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw StorageError("manifest: malformed line '" + line + "'");
            auto trim = [](std::string s) {
                s.erase(0, s.find_first_not_of(" \t"));
                s.erase(s.find_last_not_of(" \t\r") + 1);
                return s;
            };
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            try {
                if (key == "format_version") {
                    m.format_version = std::stoi(value);
                } else if (key == "n_qubits") {
                    m.n_qubits = static_cast<unsigned>(std::stoul(value));
                } else if (key == "chunk_bytes") {
                    m.chunk_bytes = std::stoull(value);
                } else if (key == "shard") {
                    const auto sp = value.find(' ');
                    if (sp == std::string::npos)
                        throw StorageError("manifest: shard entry needs '<length> <path>'");
                    m.shards.push_back({fs::path(trim(value.substr(sp + 1))), std::stoull(value.substr(0, sp))});
                } else {
                    throw StorageError("manifest: unknown key '" + key + "'");
                }
            } catch (const std::logic_error&) {
                throw StorageError("manifest: bad value in line '" + line + "'");
            }
        }
        m.validate();
        return m;
    }

    void save() const
    {
        const fs::path target = directory / kManifestName;
        const fs::path tmp = directory / (std::string(kManifestName) + ".tmp");
        {
            std::ofstream out(tmp, std::ios::trunc);
            out << to_text();
            if (!out)
                throw StorageError("cannot write manifest '" + tmp.string() + "'");
        }
        fs::rename(tmp, target);
    }

    static PoolManifest load(const fs::path& directory)
    {
        const fs::path p = directory / kManifestName;
        std::ifstream in(p);
        if (!in)
            throw StorageError("cannot open manifest '" + p.string() + "'");
        std::stringstream buf;
        buf << in.rdbuf();
        return from_text(buf.str(), directory);
    }

    bool same_geometry(const PoolManifest& o) const
    {
        return n_qubits == o.n_qubits && chunk_bytes == o.chunk_bytes && shards == o.shards;
    }
};

/// Owns a POSIX file descriptor.
class FileHandle {
public:
    FileHandle() = default;
    FileHandle(const fs::path& path, int flags, mode_t mode = 0644) : path_(path)
    {
        fd_ = ::open(path.c_str(), flags | O_CLOEXEC, mode);
        if (fd_ < 0)
            throw StorageError("open '" + path.string() + "': " + std::strerror(errno));
    }
    FileHandle(FileHandle&& o) noexcept : fd_(std::exchange(o.fd_, -1)), path_(std::move(o.path_)) {}
    FileHandle& operator=(FileHandle&& o) noexcept
    {
        if (this != &o) {
            close();
            fd_ = std::exchange(o.fd_, -1);
            path_ = std::move(o.path_);
        }
        return *this;
    }
    FileHandle(const FileHandle&) = delete;
    FileHandle& operator=(const FileHandle&) = delete;
    ~FileHandle() { close(); }

    int fd() const { return fd_; }
    const fs::path& path() const { return path_; }

    void pread_all(std::span<std::byte> out, std::uint64_t offset) const
    {
        std::size_t done = 0;
        while (done < out.size()) {
            const ssize_t r = ::pread(fd_, out.data() + done, out.size() - done, static_cast<off_t>(offset + done));
            if (r < 0 && errno == EINTR)
                continue;
            if (r < 0)
                throw StorageError("read '" + path_.string() + "' at offset " + std::to_string(offset + done) +
                                   ": " + std::strerror(errno));
            if (r == 0)
                throw StorageError("read '" + path_.string() + "' at offset " + std::to_string(offset + done) +
                                   ": unexpected end of file");
            done += static_cast<std::size_t>(r);
        }
    }

    void pwrite_all(std::span<const std::byte> in, std::uint64_t offset) const
    {
        std::size_t done = 0;
        while (done < in.size()) {
            const ssize_t w = ::pwrite(fd_, in.data() + done, in.size() - done, static_cast<off_t>(offset + done));
            if (w < 0 && errno == EINTR)
                continue;
            if (w < 0)
                throw StorageError("write '" + path_.string() + "' at offset " + std::to_string(offset + done) +
                                   ": " + std::strerror(errno));
            done += static_cast<std::size_t>(w);
        }
    }

    void sync() const
    {
        if (::fdatasync(fd_) != 0)
            throw StorageError("fdatasync '" + path_.string() + "': " + std::strerror(errno));
    }

private:
    void close()
    {
        if (fd_ >= 0)
            ::close(fd_);
        fd_ = -1;
    }

    int fd_ = -1;
    fs::path path_;
};

/// Creates (or recreates, zero-filled) the shard files and writes the manifest.
inline PoolManifest create_pool(unsigned n_qubits, std::uint64_t chunk_bytes, std::size_t shard_count,
                                const fs::path& directory, bool overwrite = false)
{
    if (shard_count == 0)
        throw StorageError("create_pool: shard_count must be >= 1");
    PoolManifest m;
    m.n_qubits = n_qubits;
    m.chunk_bytes = chunk_bytes;
    m.directory = directory;
    if (n_qubits == 0 || n_qubits > kMaxQubits)
        throw StorageError("create_pool: n_qubits must be in [1, " + std::to_string(kMaxQubits) + "]");
    if (!is_power_of_two(chunk_bytes) || chunk_bytes < 32)
        throw StorageError("create_pool: chunk_bytes must be a power of two >= 32, got " +
                           std::to_string(chunk_bytes));
    if (chunk_bytes > m.total_bytes())
        throw StorageError("create_pool: chunk_bytes " + std::to_string(chunk_bytes) + " exceeds state size " +
                           std::to_string(m.total_bytes()));
    if (m.chunk_count() % shard_count != 0)
        throw StorageError("create_pool: " + std::to_string(m.chunk_count()) + " chunks cannot be split evenly over " +
                           std::to_string(shard_count) + " shards");
    const std::uint64_t shard_len = m.total_bytes() / shard_count;
    for (std::size_t s = 0; s < shard_count; ++s)
        m.shards.push_back({fs::path("shard-" + std::to_string(s) + ".bin"), shard_len});
    m.validate();

    fs::create_directories(directory);
    if (fs::exists(directory / kManifestName)) {
        PoolManifest existing;
        try {
            existing = PoolManifest::load(directory);
        } catch (const StorageError&) {
            if (!overwrite)
                throw;
        }
        if (!overwrite && !existing.same_geometry(m))
            throw StorageError("create_pool: '" + directory.string() +
                               "' holds an incompatible pool manifest (use overwrite to replace it)");
    }

    const fs::space_info space = fs::space(directory);
    if (space.available < m.total_bytes())
        throw StorageError("create_pool: insufficient disk space in '" + directory.string() + "': need " +
                           std::to_string(m.total_bytes()) + " bytes, " + std::to_string(space.available) +
                           " available");

    for (std::size_t s = 0; s < shard_count; ++s) {
        FileHandle f(m.shard_path(s), O_RDWR | O_CREAT | O_TRUNC);
        if (const int rc = ::posix_fallocate(f.fd(), 0, static_cast<off_t>(shard_len)); rc != 0) {
            // Some filesystems do not support fallocate; a sparse file reads back as zeros too.
            if (rc == ENOSPC)
                throw StorageError("create_pool: insufficient disk space for '" + f.path().string() + "'");
            if (::ftruncate(f.fd(), static_cast<off_t>(shard_len)) != 0)
                throw StorageError("create_pool: cannot size '" + f.path().string() + "': " + std::strerror(errno));
        }
        f.sync();
    }
    m.save();
    return m;
}

inline std::span<std::byte> as_writable_bytes(std::span<Amplitude> a) { return std::as_writable_bytes(a); }
inline std::span<const std::byte> as_bytes(std::span<const Amplitude> a) { return std::as_bytes(a); }

/// Unit of chunk I/O beneath the cache tier.
class ChunkBackend {
public:
    virtual ~ChunkBackend() = default;

    virtual const PoolManifest& manifest() const = 0;
    virtual void read(ChunkId id, std::span<std::byte> out) = 0;
    virtual void write(ChunkId id, std::span<const std::byte> in) = 0;
    /// Durability barrier over everything written since the previous sync.
    virtual void sync() = 0;
    virtual std::string name() const = 0;
};

/// Direct positional I/O on the shared shard files.
class SharedPoolBackend final : public ChunkBackend {
public:
    explicit SharedPoolBackend(PoolManifest manifest) : manifest_(std::move(manifest))
    {
        manifest_.validate();
        for (std::size_t s = 0; s < manifest_.shards.size(); ++s) {
            FileHandle f(manifest_.shard_path(s), O_RDWR);
            struct stat st{};
            if (::fstat(f.fd(), &st) != 0 || static_cast<std::uint64_t>(st.st_size) != manifest_.shards[s].length)
                throw StorageError("shard '" + f.path().string() + "' size does not match manifest length " +
                                   std::to_string(manifest_.shards[s].length));
            files_.push_back(std::move(f));
        }
        unsynced_.assign(files_.size(), false);
    }

    const PoolManifest& manifest() const override { return manifest_; }
    std::string name() const override { return "direct"; }

    void read(ChunkId id, std::span<std::byte> out) override
    {
        check_len(out.size());
        const auto loc = manifest_.locate(id);
        files_[loc.shard].pread_all(out, loc.offset);
    }

    void write(ChunkId id, std::span<const std::byte> in) override
    {
        check_len(in.size());
        const auto loc = manifest_.locate(id);
        files_[loc.shard].pwrite_all(in, loc.offset);
        unsynced_[loc.shard] = true;
    }

    void sync() override
    {
        for (std::size_t s = 0; s < files_.size(); ++s) {
            if (unsynced_[s]) {
                files_[s].sync();
                unsynced_[s] = false;
            }
        }
    }

private:
    void check_len(std::size_t n) const
    {
        if (n != manifest_.chunk_bytes)
            throw StorageError("chunk buffer is " + std::to_string(n) + " bytes, pool chunk is " +
                               std::to_string(manifest_.chunk_bytes));
    }

    PoolManifest manifest_;
    std::vector<FileHandle> files_;
    std::vector<bool> unsynced_;
};

struct NetworkProfile {
    std::chrono::nanoseconds per_request_latency{0};
    double bandwidth_bytes_per_s = std::numeric_limits<double>::infinity();
    unsigned replication_factor = 1;

    /// 1 ms per request, 10 Gb/s link, single replica.
    static NetworkProfile classic_tcp() { return {std::chrono::milliseconds(1), 1.25e9, 1}; }

    void validate() const
    {
        if (per_request_latency.count() < 0)
            throw std::invalid_argument("network profile: latency must be >= 0");
        if (!(bandwidth_bytes_per_s > 0))
            throw std::invalid_argument("network profile: bandwidth must be > 0");
        if (replication_factor < 1)
            throw std::invalid_argument("network profile: replication factor must be >= 1");
    }

    std::chrono::nanoseconds cost(std::uint64_t bytes) const
    {
        const double secs = static_cast<double>(bytes) / bandwidth_bytes_per_s;
        return per_request_latency + std::chrono::nanoseconds(static_cast<std::int64_t>(secs * 1e9));
    }
};

/// Models a replicated store reached over a classical network stack: same
/// bytes as the wrapped backend, plus a sleep per request.
class EmulatedRemoteBackend final : public ChunkBackend {
public:
    EmulatedRemoteBackend(std::unique_ptr<ChunkBackend> inner, NetworkProfile profile)
        : inner_(std::move(inner)), profile_(profile)
    {
        profile_.validate();
    }

    const PoolManifest& manifest() const override { return inner_->manifest(); }
    std::string name() const override { return "emulated"; }
    const NetworkProfile& profile() const { return profile_; }

    void read(ChunkId id, std::span<std::byte> out) override
    {
        inner_->read(id, out);
        charge(out.size());
    }

    void write(ChunkId id, std::span<const std::byte> in) override
    {
        inner_->write(id, in);
        const std::uint64_t wire = static_cast<std::uint64_t>(in.size()) * profile_.replication_factor;
        network_bytes_written_ += wire;
        charge(wire);
    }

    void sync() override { inner_->sync(); }

    std::uint64_t network_bytes_written() const { return network_bytes_written_; }
    std::chrono::nanoseconds injected() const { return injected_; }

private:
    void charge(std::uint64_t bytes)
    {
        const auto c = profile_.cost(bytes);
        injected_ += c;
        if (c.count() > 0)
            precise_sleep(c);
    }

    static void precise_sleep(std::chrono::nanoseconds d)
    {
        const auto until = std::chrono::steady_clock::now() + d;
        std::this_thread::sleep_until(until);
    }

    std::unique_ptr<ChunkBackend> inner_;
    NetworkProfile profile_;
    std::uint64_t network_bytes_written_ = 0;
    std::chrono::nanoseconds injected_{0};
};

struct BackendConfig {
    enum class Kind { Direct, Emulated };
    Kind kind = Kind::Direct;
    NetworkProfile profile = NetworkProfile::classic_tcp();

    std::string name() const { return kind == Kind::Direct ? "direct" : "emulated"; }
};

inline std::unique_ptr<ChunkBackend> open_backend(const PoolManifest& m, const BackendConfig& cfg)
{
    auto direct = std::make_unique<SharedPoolBackend>(m);
    if (cfg.kind == BackendConfig::Kind::Direct)
        return direct;
    return std::make_unique<EmulatedRemoteBackend>(std::move(direct), cfg.profile);
}

struct IoStats {
    double read_ms = 0;
    double write_ms = 0;
    double writeback_ms = 0;
    std::uint64_t bytes_read = 0;     // backend reads (cache misses)
    std::uint64_t bytes_written = 0;  // backend writes (dirty evictions + flushes)
    std::uint64_t read_calls = 0;     // read_chunk calls
    std::uint64_t write_calls = 0;    // write_chunk calls
    std::uint64_t hits = 0;
    std::uint64_t misses = 0;
    std::uint64_t evictions = 0;
    std::uint64_t dirty_evictions = 0;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double ms_since(Clock::time_point t0)
{
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace detail

/// A worker's view of the pool: LRU write-back cache over a backend.
///
/// All operations lock an internal mutex, so a prefetch thread and a compute
/// thread belonging to the same worker may share one handle.
class TieredPool {
public:
    TieredPool(std::unique_ptr<ChunkBackend> backend, std::uint64_t cache_bytes)
        : backend_(std::move(backend)), chunk_bytes_(backend_->manifest().chunk_bytes),
          capacity_bytes_(cache_bytes)
    {
        if (capacity_bytes_ < chunk_bytes_)
            throw StorageError("cache capacity " + std::to_string(capacity_bytes_) +
                               " bytes cannot hold a single " + std::to_string(chunk_bytes_) + "-byte chunk");
        slots_ = std::min<std::uint64_t>(capacity_bytes_ / chunk_bytes_, backend_->manifest().chunk_count());
        // Reserve and fault in the whole tier now so gate timings never pay for it.
        free_.reserve(slots_);
        for (std::size_t i = 0; i < slots_; ++i) {
            auto buf = std::make_unique_for_overwrite<std::byte[]>(chunk_bytes_);
            std::memset(buf.get(), 0, chunk_bytes_);
            free_.push_back(std::move(buf));
        }
    }

    const PoolManifest& manifest() const { return backend_->manifest(); }
    const ChunkBackend& backend() const { return *backend_; }
    std::uint64_t chunk_bytes() const { return chunk_bytes_; }
    Index chunk_amps() const { return chunk_bytes_ / kAmplitudeBytes; }
    std::uint64_t capacity_bytes() const { return capacity_bytes_; }

    std::uint64_t resident_bytes() const
    {
        std::lock_guard lock(mu_);
        return lru_.size() * chunk_bytes_;
    }

    bool is_resident(ChunkId id) const
    {
        std::lock_guard lock(mu_);
        return index_.contains(id);
    }

    bool is_dirty(ChunkId id) const
    {
        std::lock_guard lock(mu_);
        auto it = index_.find(id);
        return it != index_.end() && it->second->dirty;
    }

    IoStats stats() const
    {
        std::lock_guard lock(mu_);
        return stats_;
    }

    /// Restricts access to chunks for which `owned(id)` holds. Pass an empty
    /// function to lift the restriction.
    void set_access_guard(std::function<bool(ChunkId)> owned)
    {
        std::lock_guard lock(mu_);
        guard_ = std::move(owned);
    }

    void read_chunk(ChunkId id, std::span<Amplitude> out)
    {
        std::lock_guard lock(mu_);
        check(id, out.size());
        ++stats_.read_calls;
        if (auto it = index_.find(id); it != index_.end()) {
            ++stats_.hits;
            lru_.splice(lru_.begin(), lru_, it->second);
            std::memcpy(out.data(), it->second->data.get(), chunk_bytes_);
            return;
        }
        ++stats_.misses;
        Entry& e = admit(id);
        const auto t0 = detail::Clock::now();
        try {
            backend_->read(id, {e.data.get(), chunk_bytes_});
        } catch (...) {
            drop_front();
            throw;
        }
        stats_.read_ms += detail::ms_since(t0);
        stats_.bytes_read += chunk_bytes_;
        std::memcpy(out.data(), e.data.get(), chunk_bytes_);
        assert_capacity();
    }

    void write_chunk(ChunkId id, std::span<const Amplitude> in)
    {
        std::lock_guard lock(mu_);
        check(id, in.size());
        ++stats_.write_calls;
        Entry* e = nullptr;
        if (auto it = index_.find(id); it != index_.end()) {
            lru_.splice(lru_.begin(), lru_, it->second);
            e = &*it->second;
        } else {
            e = &admit(id);
        }
        const auto t0 = detail::Clock::now();
        std::memcpy(e->data.get(), in.data(), chunk_bytes_);
        e->dirty = true;
        stats_.write_ms += detail::ms_since(t0);
        assert_capacity();
    }

    /// Flushes every dirty chunk (ascending id) and issues the durability barrier.
    void write_back()
    {
        std::lock_guard lock(mu_);
        std::vector<Entry*> dirty;
        for (Entry& e : lru_)
            if (e.dirty)
                dirty.push_back(&e);
        if (dirty.empty() && !unsynced_)
            return;
        std::sort(dirty.begin(), dirty.end(), [](const Entry* a, const Entry* b) { return a->id < b->id; });
        const auto t0 = detail::Clock::now();
        for (Entry* e : dirty) {
            try {
                backend_->write(e->id, {e->data.get(), chunk_bytes_});
            } catch (const StorageError& err) {
                throw StorageError("write-back of chunk " + std::to_string(e->id) + ": " + err.what());
            }
            e->dirty = false;
            stats_.bytes_written += chunk_bytes_;
        }
        backend_->sync();
        unsynced_ = false;
        stats_.writeback_ms += detail::ms_since(t0);
    }

    /// Drops every clean entry. Dirty entries must be flushed first.
    void invalidate()
    {
        std::lock_guard lock(mu_);
        for (auto it = lru_.begin(); it != lru_.end();) {
            if (it->dirty)
                throw StorageError("invalidate: chunk " + std::to_string(it->id) + " is dirty");
            index_.erase(it->id);
            free_.push_back(std::move(it->data));
            it = lru_.erase(it);
        }
    }

private:
    struct Entry {
        ChunkId id = 0;
        bool dirty = false;
        std::unique_ptr<std::byte[]> data;
    };

    void check(ChunkId id, std::size_t amps) const
    {
        if (amps * kAmplitudeBytes != chunk_bytes_)
            throw StorageError("chunk buffer holds " + std::to_string(amps) + " amplitudes, pool chunk holds " +
                               std::to_string(chunk_bytes_ / kAmplitudeBytes));
        if (id >= backend_->manifest().chunk_count())
            throw StorageError("chunk " + std::to_string(id) + " out of range");
        if (guard_ && !guard_(id))
            throw AccessViolation("chunk " + std::to_string(id) + " is outside the owned work range");
    }

    // Inserts a fresh MRU entry for `id`, evicting the LRU entry when full.
    Entry& admit(ChunkId id)
    {
        std::unique_ptr<std::byte[]> buf;
        if (lru_.size() >= slots_) {
            Entry& victim = lru_.back();
            if (victim.dirty) {
                const auto t0 = detail::Clock::now();
                backend_->write(victim.id, {victim.data.get(), chunk_bytes_});
                stats_.writeback_ms += detail::ms_since(t0);
                stats_.bytes_written += chunk_bytes_;
                ++stats_.dirty_evictions;
                unsynced_ = true;
            }
            ++stats_.evictions;
            index_.erase(victim.id);
            buf = std::move(victim.data);
            lru_.pop_back();
        } else {
            buf = std::move(free_.back());
            free_.pop_back();
        }
        lru_.push_front(Entry{id, false, std::move(buf)});
        index_[id] = lru_.begin();
        return lru_.front();
    }

    void drop_front()
    {
        Entry& e = lru_.front();
        index_.erase(e.id);
        free_.push_back(std::move(e.data));
        lru_.pop_front();
    }

    void assert_capacity() const
    {
        if (lru_.size() * chunk_bytes_ > capacity_bytes_)
            throw std::logic_error("cache residency exceeds capacity");
    }

    std::unique_ptr<ChunkBackend> backend_;
    std::uint64_t chunk_bytes_;
    std::uint64_t capacity_bytes_;
    std::size_t slots_ = 0;

    mutable std::mutex mu_;
    std::list<Entry> lru_;  // front = most recently used
    std::unordered_map<ChunkId, std::list<Entry>::iterator> index_;
    std::vector<std::unique_ptr<std::byte[]>> free_;
    std::function<bool(ChunkId)> guard_;
    bool unsynced_ = false;
    IoStats stats_;
};

inline TieredPool open_pool(const PoolManifest& m, const BackendConfig& backend, std::uint64_t cache_bytes)
{
    return TieredPool(open_backend(m, backend), cache_bytes);
}

/// Writes the basis state e_k into a freshly created (all-zero) pool.
inline void write_basis_state(const PoolManifest& m, Index k)
{
    if (k >= pow2(m.n_qubits))
        throw std::invalid_argument("basis index " + std::to_string(k) + " out of range for " +
                                    std::to_string(m.n_qubits) + " qubits");
    SharedPoolBackend backend(m);
    std::vector<Amplitude> chunk(m.chunk_amps());
    const ChunkId id = k / m.chunk_amps();
    chunk[k % m.chunk_amps()] = Amplitude{1.0, 0.0};
    backend.write(id, std::as_bytes(std::span<const Amplitude>(chunk)));
    backend.sync();
}

/// Loads the whole pool into memory (verification support; bounded by RAM).
inline DenseState load_dense(const PoolManifest& m)
{
    DenseState s(m.n_qubits);
    SharedPoolBackend backend(m);
    const Index per = m.chunk_amps();
    for (ChunkId id = 0; id < m.chunk_count(); ++id)
        backend.read(id, std::as_writable_bytes(s.amplitudes().subspan(id * per, per)));
    return s;
}

/// Overwrites the whole pool from a dense state and syncs.
inline void store_dense(const PoolManifest& m, const DenseState& s)
{
    if (s.n_qubits() != m.n_qubits)
        throw std::invalid_argument("store_dense: qubit count mismatch");
    SharedPoolBackend backend(m);
    const Index per = m.chunk_amps();
    for (ChunkId id = 0; id < m.chunk_count(); ++id)
        backend.write(id, std::as_bytes(s.amplitudes().subspan(id * per, per)));
    backend.sync();
}

/// Streams Σ|amp|² over the pool without loading it whole.
inline double pool_norm_sq(const PoolManifest& m)
{
    SharedPoolBackend backend(m);
    std::vector<Amplitude> chunk(m.chunk_amps());
    double acc = 0;
    for (ChunkId id = 0; id < m.chunk_count(); ++id) {
        backend.read(id, std::as_writable_bytes(std::span<Amplitude>(chunk)));
        acc += norm_sq(chunk);
    }
    return acc;
}

}  // namespace tierqs
