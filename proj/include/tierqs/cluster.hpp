#pragma once

// Coordinator/worker control plane.
//
// Only control messages travel between the coordinator and the workers;
// amplitudes move exclusively between each worker and the shared pool.
//
// Wire format, one frame per message:
//
//   uint32 big-endian length N, then N bytes of text:
//     kind=<ASSIGN|START_GATE|GATE_DONE|BARRIER_RELEASE|SHUTDOWN>\n
//     gate_seq=<int>\n
//     node=<uint>\n
//     payload=<single line>\n
//
// Payloads are ';'-separated key:value pairs:
//   ASSIGN       pool:<dir>;cache_bytes:<u64>;backend:<direct|emulated>;
//                latency_ns:<i64>;bandwidth:<double>;replication:<uint>;
//                sequential:<0|1>;workers:<uint>
//   START_GATE   gate:<circuit-file gate line>;unit_lo:<u64>;unit_hi:<u64>
//   ASSIGN echo  status:ok | status:error;message:<text>
//   GATE_DONE    status:ok;compute_ms:..;read_ms:..;write_ms:..;writeback_ms:..;
//                total_ms:..;bytes:..;chunks_read:..;chunks_written:..
//                or status:error;message:<text>
//   others       empty
//
// After ASSIGN each worker opens its pool and echoes an ASSIGN frame with
// payload status:ok (or status:error;message:..). Then, per gate g, the
// coordinator sends START_GATE to every worker, waits for
// GATE_DONE from all of them (each worker has flushed its range by then), and
// only then sends BARRIER_RELEASE. Workers do not begin g+1 before the release.

#include "tierqs/circuit_io.hpp"
#include "tierqs/engine.hpp"

#include <atomic>
#include <charconv>

#include <poll.h>
#include <sys/socket.h>
#include <sys/un.h>

namespace tierqs {

enum class MsgKind { Assign, StartGate, GateDone, BarrierRelease, Shutdown };

inline const char* to_string(MsgKind k)
{
    switch (k) {
    case MsgKind::Assign: return "ASSIGN";
    case MsgKind::StartGate: return "START_GATE";
    case MsgKind::GateDone: return "GATE_DONE";
    case MsgKind::BarrierRelease: return "BARRIER_RELEASE";
    case MsgKind::Shutdown: return "SHUTDOWN";
    }
    return "?";
}

class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline MsgKind parse_kind(const std::string& s)
{
    for (MsgKind k : {MsgKind::Assign, MsgKind::StartGate, MsgKind::GateDone, MsgKind::BarrierRelease,
                      MsgKind::Shutdown})
        if (s == to_string(k))
            return k;
    throw ProtocolError("unknown message kind '" + s + "'");
}

struct ControlMessage {
    MsgKind kind = MsgKind::Shutdown;
    int gate_seq = -1;
    NodeId node = 0;
    std::string payload;

    bool operator==(const ControlMessage&) const = default;
};

inline constexpr std::size_t kMaxFrameBytes = 64 * 1024;

inline std::string encode_frame(const ControlMessage& m)
{
    if (m.payload.find('\n') != std::string::npos)
        throw ProtocolError("payload must be a single line");
    const std::string body = std::string("kind=") + to_string(m.kind) + "\ngate_seq=" + std::to_string(m.gate_seq) +
                             "\nnode=" + std::to_string(m.node) + "\npayload=" + m.payload + "\n";
    if (body.size() > kMaxFrameBytes)
        throw ProtocolError("control frame too large: " + std::to_string(body.size()) + " bytes");
    const auto n = static_cast<std::uint32_t>(body.size());
    std::string frame;
    frame.reserve(4 + body.size());
    frame.push_back(static_cast<char>((n >> 24) & 0xff));
    frame.push_back(static_cast<char>((n >> 16) & 0xff));
    frame.push_back(static_cast<char>((n >> 8) & 0xff));
    frame.push_back(static_cast<char>(n & 0xff));
    frame += body;
    return frame;
}

inline ControlMessage decode_body(const std::string& body)
{
    ControlMessage m;
    bool have_kind = false, have_seq = false, have_node = false, have_payload = false;
    std::size_t pos = 0;
    while (pos < body.size()) {
        auto nl = body.find('\n', pos);
        if (nl == std::string::npos)
            throw ProtocolError("control frame: unterminated line");
        const std::string line = body.substr(pos, nl - pos);
        pos = nl + 1;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ProtocolError("control frame: malformed line '" + line + "'");
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        try {
            if (key == "kind") {
                m.kind = parse_kind(value);
                have_kind = true;
            } else if (key == "gate_seq") {
                m.gate_seq = std::stoi(value);
                have_seq = true;
            } else if (key == "node") {
                m.node = static_cast<NodeId>(std::stoul(value));
                have_node = true;
            } else if (key == "payload") {
                m.payload = value;
                have_payload = true;
            } else {
                throw ProtocolError("control frame: unknown field '" + key + "'");
            }
        } catch (const std::logic_error&) {
            throw ProtocolError("control frame: bad value in '" + line + "'");
        }
    }
    if (!(have_kind && have_seq && have_node && have_payload))
        throw ProtocolError("control frame: missing field");
    return m;
}

// --- payload helpers -------------------------------------------------------

using Fields = std::map<std::string, std::string>;

inline std::string encode_fields(const std::vector<std::pair<std::string, std::string>>& kv)
{
    std::string out;
    for (const auto& [k, v] : kv) {
        if (!out.empty())
            out += ';';
        std::string clean = v;
        for (char& c : clean)
            if (c == ';' || c == '\n')
                c = ' ';
        out += k + ":" + clean;
    }
    return out;
}

inline Fields decode_fields(const std::string& payload)
{
    Fields f;
    std::size_t start = 0;
    while (start < payload.size()) {
        auto semi = payload.find(';', start);
        const std::string item = payload.substr(start, semi == std::string::npos ? std::string::npos : semi - start);
        const auto colon = item.find(':');
        if (colon == std::string::npos)
            throw ProtocolError("payload: malformed item '" + item + "'");
        f[item.substr(0, colon)] = item.substr(colon + 1);
        if (semi == std::string::npos)
            break;
        start = semi + 1;
    }
    return f;
}

inline const std::string& field(const Fields& f, const std::string& key)
{
    auto it = f.find(key);
    if (it == f.end())
        throw ProtocolError("payload: missing '" + key + "'");
    return it->second;
}

inline std::string fmt_double(double v)
{
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

struct SessionConfig {
    fs::path pool_dir;
    std::uint64_t cache_bytes = 64ull << 20;
    BackendConfig backend;
    bool sequential = false;
};

inline std::string encode_session(const SessionConfig& s, unsigned workers)
{
    return encode_fields({{"pool", s.pool_dir.string()},
                          {"cache_bytes", std::to_string(s.cache_bytes)},
                          {"backend", s.backend.name()},
                          {"latency_ns", std::to_string(s.backend.profile.per_request_latency.count())},
                          {"bandwidth", fmt_double(s.backend.profile.bandwidth_bytes_per_s)},
                          {"replication", std::to_string(s.backend.profile.replication_factor)},
                          {"sequential", s.sequential ? "1" : "0"},
                          {"workers", std::to_string(workers)}});
}

inline SessionConfig decode_session(const std::string& payload)
{
    const Fields f = decode_fields(payload);
    SessionConfig s;
    try {
        s.pool_dir = field(f, "pool");
        s.cache_bytes = std::stoull(field(f, "cache_bytes"));
        const std::string& b = field(f, "backend");
        if (b == "direct")
            s.backend.kind = BackendConfig::Kind::Direct;
        else if (b == "emulated")
            s.backend.kind = BackendConfig::Kind::Emulated;
        else
            throw ProtocolError("session: unknown backend '" + b + "'");
        s.backend.profile.per_request_latency = std::chrono::nanoseconds(std::stoll(field(f, "latency_ns")));
        s.backend.profile.bandwidth_bytes_per_s = std::stod(field(f, "bandwidth"));
        s.backend.profile.replication_factor = static_cast<unsigned>(std::stoul(field(f, "replication")));
        s.sequential = field(f, "sequential") == "1";
    } catch (const std::logic_error&) {
        throw ProtocolError("session: malformed payload '" + payload + "'");
    }
    return s;
}

inline std::string encode_metrics(const GateMetrics& g)
{
    return encode_fields({{"status", "ok"},
                          {"compute_ms", fmt_double(g.compute_ms)},
                          {"read_ms", fmt_double(g.read_ms)},
                          {"write_ms", fmt_double(g.write_ms)},
                          {"writeback_ms", fmt_double(g.writeback_ms)},
                          {"total_ms", fmt_double(g.total_ms)},
                          {"bytes", std::to_string(g.bytes_processed)},
                          {"chunks_read", std::to_string(g.chunks_read)},
                          {"chunks_written", std::to_string(g.chunks_written)}});
}

inline GateMetrics decode_metrics(const Fields& f)
{
    GateMetrics g;
    try {
        g.compute_ms = std::stod(field(f, "compute_ms"));
        g.read_ms = std::stod(field(f, "read_ms"));
        g.write_ms = std::stod(field(f, "write_ms"));
        g.writeback_ms = std::stod(field(f, "writeback_ms"));
        g.total_ms = std::stod(field(f, "total_ms"));
        g.bytes_processed = std::stoull(field(f, "bytes"));
        g.chunks_read = std::stoull(field(f, "chunks_read"));
        g.chunks_written = std::stoull(field(f, "chunks_written"));
    } catch (const std::logic_error&) {
        throw ProtocolError("GATE_DONE: malformed metrics");
    }
    g.speed_mb_s = speed_mb_s(g.bytes_processed, g.total_ms);
    return g;
}

// --- transport -------------------------------------------------------------

class ChannelClosed : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ChannelTimeout : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One framed stream-socket connection. Counts every byte it moves.
class Channel {
public:
    Channel() = default;
    explicit Channel(int fd) : fd_(fd) {}
    Channel(Channel&& o) noexcept
        : fd_(std::exchange(o.fd_, -1)), sent_(o.sent_), received_(o.received_), inbuf_(std::move(o.inbuf_))
    {
    }
    Channel& operator=(Channel&& o) noexcept
    {
        if (this != &o) {
            close();
            fd_ = std::exchange(o.fd_, -1);
            sent_ = o.sent_;
            received_ = o.received_;
            inbuf_ = std::move(o.inbuf_);
        }
        return *this;
    }
    Channel(const Channel&) = delete;
    Channel& operator=(const Channel&) = delete;
    ~Channel() { close(); }

    static Channel connect(const fs::path& endpoint)
    {
        const int fd = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
        if (fd < 0)
            throw ChannelClosed(std::string("socket: ") + std::strerror(errno));
        Channel ch(fd);
        sockaddr_un addr = make_addr(endpoint);
        if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
            throw ChannelClosed("connect '" + endpoint.string() + "': " + std::strerror(errno));
        return ch;
    }

    static sockaddr_un make_addr(const fs::path& endpoint)
    {
        sockaddr_un addr{};
        addr.sun_family = AF_UNIX;
        const std::string p = endpoint.string();
        if (p.size() >= sizeof addr.sun_path)
            throw ChannelClosed("endpoint path too long: '" + p + "'");
        std::memcpy(addr.sun_path, p.c_str(), p.size() + 1);
        return addr;
    }

    int fd() const { return fd_; }
    bool open() const { return fd_ >= 0; }
    std::uint64_t bytes_sent() const { return sent_; }
    std::uint64_t bytes_received() const { return received_; }

    /// Returns the frame size in bytes.
    std::size_t send(const ControlMessage& m)
    {
        const std::string frame = encode_frame(m);
        std::size_t done = 0;
        while (done < frame.size()) {
            const ssize_t w = ::send(fd_, frame.data() + done, frame.size() - done, MSG_NOSIGNAL);
            if (w < 0 && errno == EINTR)
                continue;
            if (w < 0)
                throw ChannelClosed(std::string("send: ") + std::strerror(errno));
            done += static_cast<std::size_t>(w);
        }
        sent_ += frame.size();
        return frame.size();
    }

    /// A complete frame is already buffered.
    bool has_frame() const
    {
        if (inbuf_.size() < 4)
            return false;
        return inbuf_.size() >= 4 + frame_len();
    }

    /// Blocks until a frame arrives; a negative timeout waits forever.
    ControlMessage recv(std::chrono::milliseconds timeout = std::chrono::milliseconds(-1))
    {
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        while (!has_frame()) {
            int wait_ms = -1;
            if (timeout.count() >= 0) {
                const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                    deadline - std::chrono::steady_clock::now());
                if (left.count() <= 0)
                    throw ChannelTimeout("timed out waiting for a control message");
                wait_ms = static_cast<int>(left.count());
            }
            pollfd p{fd_, POLLIN, 0};
            const int rc = ::poll(&p, 1, wait_ms);
            if (rc < 0 && errno == EINTR)
                continue;
            if (rc < 0)
                throw ChannelClosed(std::string("poll: ") + std::strerror(errno));
            if (rc == 0)
                continue;
            fill();
        }
        return pop();
    }

    /// Reads whatever is available without blocking (call after poll).
    void fill()
    {
        char buf[4096];
        const ssize_t r = ::recv(fd_, buf, sizeof buf, 0);
        if (r < 0 && (errno == EINTR || errno == EAGAIN))
            return;
        if (r < 0)
            throw ChannelClosed(std::string("recv: ") + std::strerror(errno));
        if (r == 0)
            throw ChannelClosed("peer closed the control channel");
        inbuf_.append(buf, static_cast<std::size_t>(r));
        if (inbuf_.size() >= 4 && frame_len() > kMaxFrameBytes)
            throw ProtocolError("incoming control frame exceeds " + std::to_string(kMaxFrameBytes) + " bytes");
    }

    ControlMessage pop()
    {
        const std::size_t n = frame_len();
        ControlMessage m = decode_body(inbuf_.substr(4, n));
        inbuf_.erase(0, 4 + n);
        received_ += 4 + n;
        return m;
    }

    void close()
    {
        if (fd_ >= 0)
            ::close(fd_);
        fd_ = -1;
    }

private:
    std::size_t frame_len() const
    {
        const auto b = [&](int i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(inbuf_[i])); };
        return (b(0) << 24) | (b(1) << 16) | (b(2) << 8) | b(3);
    }

    int fd_ = -1;
    std::uint64_t sent_ = 0;
    std::uint64_t received_ = 0;
    std::string inbuf_;
};

/// Listening Unix-domain socket; unlinks its path on destruction.
class ControlListener {
public:
    explicit ControlListener(fs::path endpoint) : endpoint_(std::move(endpoint))
    {
        ::unlink(endpoint_.c_str());
        fd_ = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
        if (fd_ < 0)
            throw ChannelClosed(std::string("socket: ") + std::strerror(errno));
        sockaddr_un addr = Channel::make_addr(endpoint_);
        if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd_, 64) != 0) {
            const std::string err = std::strerror(errno);
            ::close(fd_);
            throw ChannelClosed("listen '" + endpoint_.string() + "': " + err);
        }
    }
    ControlListener(const ControlListener&) = delete;
    ControlListener& operator=(const ControlListener&) = delete;
    ~ControlListener()
    {
        ::close(fd_);
        ::unlink(endpoint_.c_str());
    }

    const fs::path& endpoint() const { return endpoint_; }

    std::vector<Channel> accept(unsigned count, std::chrono::milliseconds timeout)
    {
        std::vector<Channel> out;
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        while (out.size() < count) {
            const auto left =
                std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0)
                throw ChannelTimeout("only " + std::to_string(out.size()) + " of " + std::to_string(count) +
                                     " workers connected");
            pollfd p{fd_, POLLIN, 0};
            const int rc = ::poll(&p, 1, static_cast<int>(left.count()));
            if (rc <= 0)
                continue;
            const int c = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
            if (c >= 0)
                out.emplace_back(c);
        }
        return out;
    }

private:
    fs::path endpoint_;
    int fd_ = -1;
};

inline fs::path make_endpoint_path()
{
    static std::atomic<unsigned> counter{0};
    return fs::temp_directory_path() /
           ("tierqs-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + ".sock");
}

// --- coordinator -----------------------------------------------------------

struct CoordinatorOptions {
    std::chrono::milliseconds barrier_timeout{60000};
};

struct TraceEntry {
    bool to_worker = true;
    MsgKind kind = MsgKind::Shutdown;
    int gate_seq = -1;
    NodeId node = 0;
    std::size_t bytes = 0;
};

struct CoordinatorResult {
    std::vector<GateMetrics> gate_metrics;  // gate-major, node-minor
    std::vector<RoundMetrics> gate_rounds;  // one barrier round per gate
    double pass_ms = 0;                     // first START to last RELEASE
    std::vector<std::vector<std::uint64_t>> control_bytes;  // [gate][node], both directions
    std::vector<TraceEntry> trace;
};

class RunAborted : public std::runtime_error {
public:
    RunAborted(const std::string& what, int failed_gate_seq, CoordinatorResult partial)
        : std::runtime_error(what), failed_gate_seq_(failed_gate_seq), partial_(std::move(partial))
    {
    }
    int failed_gate_seq() const { return failed_gate_seq_; }
    const CoordinatorResult& partial() const { return partial_; }

private:
    int failed_gate_seq_;
    CoordinatorResult partial_;
};

/// Drives every gate of `circuit` through the connected workers. Node ids
/// follow the order of `workers`; node 0 is the master and also computes.
inline CoordinatorResult run_coordinator(const Circuit& circuit, const PoolManifest& manifest,
                                         std::vector<Channel>& workers, const SessionConfig& session,
                                         const CoordinatorOptions& opts = {})
{
    circuit.validate();
    if (circuit.n_qubits != manifest.n_qubits)
        throw std::invalid_argument("circuit has " + std::to_string(circuit.n_qubits) + " qubits, pool has " +
                                    std::to_string(manifest.n_qubits));
    const auto W = static_cast<unsigned>(workers.size());
    if (!is_power_of_two(W))
        throw PartitionError("worker count must be a power of two, got " + std::to_string(W));

    CoordinatorResult res;
    auto send = [&](NodeId w, ControlMessage m) {
        m.node = w;
        const std::size_t n = workers[w].send(m);
        res.trace.push_back({true, m.kind, m.gate_seq, w, n});
        return n;
    };
    auto shutdown_all = [&] {
        for (NodeId w = 0; w < W; ++w) {
            try {
                if (workers[w].open())
                    send(w, {MsgKind::Shutdown, -1, w, ""});
            } catch (const std::exception&) {
            }
        }
    };
    auto fail_run = [&](const std::string& why, int g) {
        shutdown_all();
        throw RunAborted("gate " + std::to_string(g) + ": " + why, g, res);
    };

    const std::string session_payload = encode_session(session, W);
    for (NodeId w = 0; w < W; ++w)
        send(w, {MsgKind::Assign, -1, w, session_payload});
    // Each worker echoes ASSIGN once its pool handle is open.
    for (NodeId w = 0; w < W; ++w) {
        try {
            const std::uint64_t before = workers[w].bytes_received();
            ControlMessage ack = workers[w].recv(opts.barrier_timeout);
            res.trace.push_back({false, ack.kind, ack.gate_seq, w, workers[w].bytes_received() - before});
            if (ack.kind != MsgKind::Assign)
                fail_run(std::string("node ") + std::to_string(w) + " answered ASSIGN with " + to_string(ack.kind), -1);
            const Fields f = decode_fields(ack.payload);
            if (field(f, "status") != "ok") {
                auto it = f.find("message");
                fail_run("node " + std::to_string(w) + " cannot start: " +
                             (it == f.end() ? std::string("unknown error") : it->second),
                         -1);
            }
        } catch (const ChannelClosed& e) {
            fail_run("node " + std::to_string(w) + " disconnected during setup: " + e.what(), -1);
        } catch (const ChannelTimeout&) {
            fail_run("node " + std::to_string(w) + " did not acknowledge ASSIGN", -1);
        } catch (const ProtocolError& e) {
            fail_run(std::string("protocol error: ") + e.what(), -1);
        }
    }

    const auto pass_start = detail::Clock::now();
    for (std::size_t gi = 0; gi < circuit.gates.size(); ++gi) {
        const int g = static_cast<int>(gi);
        const Gate& gate = circuit.gates[gi];
        const PairGeometry geo(manifest.n_qubits, gate.target, manifest.chunk_bytes);
        const std::vector<WorkRange> ranges = partition_pairs(geo, W, g);
        std::vector<std::uint64_t> bytes(W, 0);

        const auto round_start = detail::Clock::now();
        try {
            for (NodeId w = 0; w < W; ++w) {
                const std::string payload =
                    encode_fields({{"gate", format_gate(gate)},
                                   {"unit_lo", std::to_string(ranges[w].unit_lo)},
                                   {"unit_hi", std::to_string(ranges[w].unit_hi)}});
                bytes[w] += send(w, {MsgKind::StartGate, g, w, payload});
            }
        } catch (const ChannelClosed& e) {
            fail_run(std::string("worker unreachable: ") + e.what(), g);
        }

        // Collect GATE_DONE from every worker.
        std::vector<std::optional<GateMetrics>> done(W);
        unsigned remaining = W;
        const auto deadline = detail::Clock::now() + opts.barrier_timeout;
        while (remaining > 0) {
            try {
                for (NodeId w = 0; w < W; ++w) {
                    while (!done[w] && workers[w].has_frame()) {
                        const std::uint64_t before = workers[w].bytes_received();
                        ControlMessage m = workers[w].pop();
                        const std::uint64_t n = workers[w].bytes_received() - before;
                        bytes[w] += n;
                        res.trace.push_back({false, m.kind, m.gate_seq, w, n});
                        if (m.kind != MsgKind::GateDone || m.gate_seq != g)
                            fail_run("node " + std::to_string(w) + " sent unexpected " + to_string(m.kind) +
                                         " for gate " + std::to_string(m.gate_seq),
                                     g);
                        const Fields f = decode_fields(m.payload);
                        if (field(f, "status") != "ok") {
                            auto it = f.find("message");
                            fail_run("node " + std::to_string(w) + " failed: " +
                                         (it == f.end() ? std::string("unknown error") : it->second),
                                     g);
                        }
                        GateMetrics gm = decode_metrics(f);
                        gm.node = w;
                        gm.gate_seq = g;
                        gm.gate_label = gate.label();
                        done[w] = gm;
                        --remaining;
                    }
                }
                if (remaining == 0)
                    break;
                const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - detail::Clock::now());
                if (left.count() <= 0)
                    fail_run("barrier timeout after " + std::to_string(opts.barrier_timeout.count()) + " ms", g);
                std::vector<pollfd> fds;
                std::vector<NodeId> who;
                for (NodeId w = 0; w < W; ++w) {
                    if (!done[w]) {
                        fds.push_back({workers[w].fd(), POLLIN, 0});
                        who.push_back(w);
                    }
                }
                const int rc = ::poll(fds.data(), fds.size(), static_cast<int>(left.count()));
                if (rc < 0 && errno != EINTR)
                    fail_run(std::string("poll: ") + std::strerror(errno), g);
                for (std::size_t i = 0; rc > 0 && i < fds.size(); ++i) {
                    if (fds[i].revents & (POLLIN | POLLHUP | POLLERR)) {
                        try {
                            workers[who[i]].fill();
                        } catch (const ChannelClosed& e) {
                            workers[who[i]].close();
                            fail_run("node " + std::to_string(who[i]) + " disconnected: " + e.what(), g);
                        }
                    }
                }
            } catch (const ProtocolError& e) {
                fail_run(std::string("protocol error: ") + e.what(), g);
            }
        }

        try {
            for (NodeId w = 0; w < W; ++w)
                bytes[w] += send(w, {MsgKind::BarrierRelease, g, w, ""});
        } catch (const ChannelClosed& e) {
            fail_run(std::string("worker unreachable: ") + e.what(), g);
        }
        const double round_ms = detail::ms_since(round_start);

        std::vector<GateMetrics> rows;
        for (auto& d : done)
            rows.push_back(*d);
        res.gate_rounds.push_back(aggregate_round(rows, round_ms, W, g));
        res.gate_metrics.insert(res.gate_metrics.end(), rows.begin(), rows.end());
        res.control_bytes.push_back(bytes);
    }
    res.pass_ms = detail::ms_since(pass_start);
    shutdown_all();
    return res;
}

// --- worker ----------------------------------------------------------------

struct WorkerOptions {
    /// Drop the connection instead of answering START_GATE for this gate.
    std::optional<int> crash_at_gate;
    std::function<void(const EngineEvent&)> on_event;
    std::chrono::milliseconds idle_timeout{-1};
};

/// Serves one coordinator until SHUTDOWN. Returns 0 on a clean shutdown.
inline int run_worker(const fs::path& endpoint, const WorkerOptions& opts = {})
{
    Channel ch = Channel::connect(endpoint);
    ControlMessage assign = ch.recv(opts.idle_timeout);
    if (assign.kind != MsgKind::Assign)
        throw ProtocolError(std::string("expected ASSIGN, got ") + to_string(assign.kind));
    const NodeId node = assign.node;

    std::unique_ptr<TieredPool> pool;
    SessionConfig session;
    try {
        session = decode_session(assign.payload);
        const PoolManifest m = PoolManifest::load(session.pool_dir);
        pool = std::make_unique<TieredPool>(open_backend(m, session.backend), session.cache_bytes);
    } catch (const std::exception& e) {
        ch.send({MsgKind::Assign, -1, node, encode_fields({{"status", "error"}, {"message", e.what()}})});
        return 1;
    }
    ch.send({MsgKind::Assign, -1, node, encode_fields({{"status", "ok"}})});

    auto fail = [&](int g, const std::string& why) {
        try {
            ch.send({MsgKind::GateDone, g, node, encode_fields({{"status", "error"}, {"message", why}})});
        } catch (const std::exception&) {
        }
        return 1;
    };

    for (;;) {
        ControlMessage m;
        try {
            m = ch.recv(opts.idle_timeout);
        } catch (const ChannelClosed&) {
            return 2;
        }
        if (m.kind == MsgKind::Shutdown)
            return 0;
        if (m.kind != MsgKind::StartGate)
            return fail(m.gate_seq, std::string("unexpected ") + to_string(m.kind));
        const int g = m.gate_seq;
        if (opts.crash_at_gate && *opts.crash_at_gate == g) {
            ch.close();
            return 3;
        }

        GateMetrics metrics;
        try {
            const Fields f = decode_fields(m.payload);
            const Gate gate = parse_gate_line(field(f, "gate"));
            const WorkRange range{g, std::stoull(field(f, "unit_lo")), std::stoull(field(f, "unit_hi"))};
            const PairGeometry geo(pool->manifest().n_qubits, gate.target, pool->chunk_bytes());
            pool->set_access_guard([geo, range](ChunkId id) {
                const std::uint64_t u = geo.unit_of(id);
                return u >= range.unit_lo && u < range.unit_hi;
            });
            ExecuteOptions eo{session.sequential, opts.on_event};
            metrics = execute_range(*pool, geo, range, gate, node, eo);
            pool->set_access_guard({});
        } catch (const std::exception& e) {
            return fail(g, e.what());
        }

        try {
            ch.send({MsgKind::GateDone, g, node, encode_metrics(metrics)});
            ControlMessage rel = ch.recv(opts.idle_timeout);
            if (rel.kind == MsgKind::Shutdown)
                return 0;
            if (rel.kind != MsgKind::BarrierRelease || rel.gate_seq != g)
                return fail(g, std::string("expected BARRIER_RELEASE, got ") + to_string(rel.kind));
        } catch (const ChannelClosed&) {
            return 2;
        }
        // Other workers may rewrite any chunk during the next gate.
        pool->invalidate();
    }
}

}  // namespace tierqs
