#pragma once

// Bottleneck and cost model for full-amplitude simulation.
//
// A single-qubit gate over n qubits touches 2^n amplitudes and costs 4 * 2^n
// floating-point operations. The state occupies 2^n * 16 bytes, and every
// gate must stream the whole state through whatever link feeds the compute
// units. Comparing the two rates shows which side binds.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace tierqs::analysis {

inline constexpr double kGiB = 1024.0 * 1024.0 * 1024.0;

struct WorkloadParams {
    double m_iter = 0;   // training iterations
    double n_gate = 0;   // gates per iteration
    double t_train = 0;  // seconds available

    void validate() const
    {
        if (!(m_iter > 0 && n_gate > 0 && t_train > 0))
            throw std::invalid_argument("workload: m_iter, n_gate and t_train must all be positive");
    }
};

struct ComputeProfile {
    std::string label;
    double flops = 0;
};

struct MediaPrice {
    std::string label;
    double usd_per_gb = 0;  // GB = 2^30 bytes
};

struct LinkProfile {
    std::string label;
    double bytes_per_second = 0;
};

inline void check_qubits(unsigned n)
{
    if (n < 1 || n > 63)
        throw std::invalid_argument("qubit count must be in [1, 63], got " + std::to_string(n));
}

/// 4 * 2^n, exact.
inline std::uint64_t gate_flops(unsigned n)
{
    check_qubits(n);
    if (n > 61)
        throw std::overflow_error("gate_flops: 4 * 2^" + std::to_string(n) + " overflows 64 bits");
    return std::uint64_t{4} << n;
}

/// 2^n * 16, exact.
inline std::uint64_t state_bytes(unsigned n)
{
    check_qubits(n);
    if (n > 59)
        throw std::overflow_error("state_bytes: 2^" + std::to_string(n) + " * 16 overflows 64 bits");
    return std::uint64_t{16} << n;
}

inline double gates_per_second(const ComputeProfile& p, unsigned n)
{
    if (!(p.flops > 0))
        throw std::invalid_argument("compute profile '" + p.label + "': flops must be positive");
    return p.flops / static_cast<double>(gate_flops(n));
}

inline double gates_per_second(double flops, unsigned n) { return gates_per_second(ComputeProfile{"", flops}, n); }

/// Total gates over the training window divided by its length.
inline double required_gate_rate(const WorkloadParams& w)
{
    w.validate();
    return (w.m_iter * w.n_gate) / w.t_train;
}

inline double transfer_seconds(double bytes, const LinkProfile& link)
{
    if (!(bytes > 0))
        throw std::invalid_argument("transfer_seconds: byte count must be positive");
    if (!(link.bytes_per_second > 0))
        throw std::invalid_argument("link '" + link.label + "': bandwidth must be positive");
    return bytes / link.bytes_per_second;
}

inline double transfer_seconds(double bytes, double bytes_per_second)
{
    return transfer_seconds(bytes, LinkProfile{"", bytes_per_second});
}

inline double storage_cost_usd(unsigned n, const MediaPrice& media)
{
    if (!(media.usd_per_gb > 0))
        throw std::invalid_argument("media '" + media.label + "': price must be positive");
    return static_cast<double>(state_bytes(n)) / kGiB * media.usd_per_gb;
}

inline double storage_cost_usd(unsigned n, double usd_per_gb) { return storage_cost_usd(n, MediaPrice{"", usd_per_gb}); }

/// How many full-state passes the link must carry per gate.
enum class PassConvention {
    ReadOnly,   // one state transfer per gate
    ReadWrite,  // read and write back each gate
};

inline const char* to_string(PassConvention c) { return c == PassConvention::ReadOnly ? "read-only" : "read+write"; }

inline double link_gate_rate(unsigned n, const LinkProfile& link, PassConvention c)
{
    const double passes = c == PassConvention::ReadOnly ? 1.0 : 2.0;
    return 1.0 / (passes * transfer_seconds(static_cast<double>(state_bytes(n)), link));
}

enum class Binding { Compute, Link };

inline const char* to_string(Binding b) { return b == Binding::Compute ? "compute" : "link"; }

struct BottleneckReport {
    unsigned n = 0;
    std::string compute_label;
    std::string link_label;
    PassConvention convention = PassConvention::ReadOnly;
    double compute_gate_rate = 0;
    double link_gate_rate = 0;        // under `convention`
    double link_gate_rate_alt = 0;    // under the other convention
    double ratio = 0;                 // compute / link
    Binding bottleneck = Binding::Link;
    std::optional<double> required_rate;
    std::optional<bool> compute_satisfies;
    std::optional<bool> link_satisfies;
};

inline BottleneckReport bottleneck_report(unsigned n, const ComputeProfile& compute, const LinkProfile& link,
                                          std::optional<WorkloadParams> workload = std::nullopt,
                                          PassConvention convention = PassConvention::ReadOnly)
{
    BottleneckReport r;
    r.n = n;
    r.compute_label = compute.label;
    r.link_label = link.label;
    r.convention = convention;
    r.compute_gate_rate = gates_per_second(compute, n);
    r.link_gate_rate = link_gate_rate(n, link, convention);
    r.link_gate_rate_alt = link_gate_rate(
        n, link, convention == PassConvention::ReadOnly ? PassConvention::ReadWrite : PassConvention::ReadOnly);
    r.ratio = r.compute_gate_rate / r.link_gate_rate;
    r.bottleneck = r.link_gate_rate < r.compute_gate_rate ? Binding::Link : Binding::Compute;
    if (workload) {
        r.required_rate = required_gate_rate(*workload);
        r.compute_satisfies = r.compute_gate_rate >= *r.required_rate;
        r.link_satisfies = r.link_gate_rate >= *r.required_rate;
    }
    return r;
}

// --- profile table ---------------------------------------------------------

struct ProfileTable {
    std::vector<ComputeProfile> compute;
    std::vector<LinkProfile> links;
    std::vector<MediaPrice> media;

    static ProfileTable defaults()
    {
        return {{{"GPU", 1e15}, {"CPU-SP", 4.6e12}, {"CPU-DP", 2.3e12}, {"FPGA", 1e12}},
                {{"10GbE", 1.25e9}, {"100GbE", 12.5e9}},
                {{"DRAM", 5.0}, {"HBM", 20.0}, {"DDR5-ECC", 6.0}}};
    }

    const ComputeProfile& find_compute(const std::string& label) const
    {
        for (const auto& c : compute)
            if (c.label == label)
                return c;
        throw std::invalid_argument("unknown compute profile '" + label + "'");
    }

    const LinkProfile& find_link(const std::string& label) const
    {
        for (const auto& l : links)
            if (l.label == label)
                return l;
        throw std::invalid_argument("unknown link profile '" + label + "'");
    }

    /// Entries in `j` replace defaults with the same label; new labels append.
    ///   {"compute": [{"label": "GPU", "flops": 1e15}],
    ///    "links":   [{"label": "10GbE", "bytes_per_second": 1.25e9}],
    ///    "media":   [{"label": "DRAM", "usd_per_gb": 5}]}
    void merge(const nlohmann::json& j)
    {
        auto upsert = [](auto& vec, auto item) {
            for (auto& v : vec) {
                if (v.label == item.label) {
                    v = item;
                    return;
                }
            }
            vec.push_back(item);
        };
        try {
            for (const auto& c : j.value("compute", nlohmann::json::array())) {
                ComputeProfile p{c.at("label").get<std::string>(), c.at("flops").get<double>()};
                if (!(p.flops > 0))
                    throw std::invalid_argument("compute profile '" + p.label + "': flops must be positive");
                upsert(compute, p);
            }
            for (const auto& l : j.value("links", nlohmann::json::array())) {
                LinkProfile p{l.at("label").get<std::string>(), l.at("bytes_per_second").get<double>()};
                if (!(p.bytes_per_second > 0))
                    throw std::invalid_argument("link '" + p.label + "': bandwidth must be positive");
                upsert(links, p);
            }
            for (const auto& m : j.value("media", nlohmann::json::array())) {
                MediaPrice p{m.at("label").get<std::string>(), m.at("usd_per_gb").get<double>()};
                if (!(p.usd_per_gb > 0))
                    throw std::invalid_argument("media '" + p.label + "': price must be positive");
                upsert(media, p);
            }
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument(std::string("profile config: ") + e.what());
        }
    }
};

// --- full report -----------------------------------------------------------

struct AnalyzeInput {
    unsigned n = 40;
    ProfileTable table = ProfileTable::defaults();
    std::optional<WorkloadParams> workload;
    std::string bottleneck_compute = "GPU";
    std::string bottleneck_link = "100GbE";
    PassConvention convention = PassConvention::ReadOnly;
};

inline nlohmann::json analyze_json(const AnalyzeInput& in)
{
    using nlohmann::json;
    json j;
    j["n_qubits"] = in.n;
    j["gate_flops"] = gate_flops(in.n);
    j["state_bytes"] = state_bytes(in.n);
    json rates = json::array();
    for (const auto& c : in.table.compute)
        rates.push_back({{"label", c.label}, {"flops", c.flops}, {"gates_per_second", gates_per_second(c, in.n)}});
    j["compute"] = rates;
    json links = json::array();
    for (const auto& l : in.table.links) {
        const double secs = transfer_seconds(static_cast<double>(state_bytes(in.n)), l);
        links.push_back({{"label", l.label},
                         {"bytes_per_second", l.bytes_per_second},
                         {"state_transfer_seconds", secs},
                         {"gate_rate_read_only", 1.0 / secs},
                         {"gate_rate_read_write", 0.5 / secs}});
    }
    j["links"] = links;
    json costs = json::array();
    for (const auto& m : in.table.media)
        costs.push_back({{"label", m.label}, {"usd_per_gb", m.usd_per_gb}, {"usd", storage_cost_usd(in.n, m)}});
    j["storage_cost"] = costs;
    if (in.workload)
        j["required_gate_rate"] = required_gate_rate(*in.workload);

    const auto b = bottleneck_report(in.n, in.table.find_compute(in.bottleneck_compute),
                                     in.table.find_link(in.bottleneck_link), in.workload, in.convention);
    json bj{{"compute", b.compute_label},
            {"link", b.link_label},
            {"convention", to_string(b.convention)},
            {"compute_gate_rate", b.compute_gate_rate},
            {"link_gate_rate", b.link_gate_rate},
            {"link_gate_rate_other_convention", b.link_gate_rate_alt},
            {"ratio", b.ratio},
            {"bottleneck", to_string(b.bottleneck)}};
    if (b.required_rate) {
        bj["required_gate_rate"] = *b.required_rate;
        bj["compute_satisfies"] = *b.compute_satisfies;
        bj["link_satisfies"] = *b.link_satisfies;
    }
    j["bottleneck"] = bj;
    return j;
}

inline std::string with_commas(double v, int decimals = 0)
{
    std::ostringstream s;
    s << std::fixed << std::setprecision(decimals) << v;
    std::string str = s.str();
    auto dot = str.find('.');
    std::size_t int_end = dot == std::string::npos ? str.size() : dot;
    const std::size_t first = (str[0] == '-') ? 1 : 0;
    for (std::ptrdiff_t i = static_cast<std::ptrdiff_t>(int_end) - 3; i > static_cast<std::ptrdiff_t>(first); i -= 3)
        str.insert(static_cast<std::size_t>(i), ",");
    return str;
}

inline void print_analysis(std::ostream& out, const AnalyzeInput& in)
{
    const nlohmann::json j = analyze_json(in);
    out << "Qubits: " << in.n << "\n";
    out << "  gate FLOPs (4 x 2^n):     " << with_commas(static_cast<double>(gate_flops(in.n))) << "\n";
    out << "  state bytes (2^n x 16):   " << with_commas(static_cast<double>(state_bytes(in.n))) << "\n\n";

    out << std::left << std::setw(14) << "Compute" << std::right << std::setw(14) << "FLOPS" << std::setw(16)
        << "gates/s" << "\n";
    for (const auto& c : in.table.compute) {
        std::ostringstream fl;
        fl << std::scientific << std::setprecision(2) << c.flops;
        out << std::left << std::setw(14) << c.label << std::right << std::setw(14) << fl.str() << std::setw(16)
            << std::fixed << std::setprecision(2) << gates_per_second(c, in.n) << "\n";
    }
    out << "\n"
        << std::left << std::setw(14) << "Link" << std::right << std::setw(14) << "bytes/s" << std::setw(16)
        << "transfer s" << std::setw(18) << "gates/s (read)" << "\n";
    for (const auto& l : in.table.links) {
        const double secs = transfer_seconds(static_cast<double>(state_bytes(in.n)), l);
        std::ostringstream bw;
        bw << std::scientific << std::setprecision(2) << l.bytes_per_second;
        std::ostringstream rate;
        rate << std::setprecision(3) << 1.0 / secs;
        out << std::left << std::setw(14) << l.label << std::right << std::setw(14) << bw.str() << std::setw(16)
            << std::fixed << std::setprecision(2) << secs << std::setw(18) << rate.str() << "\n";
    }
    out << "\n"
        << std::left << std::setw(14) << "Media" << std::right << std::setw(14) << "USD/GB" << std::setw(16)
        << "state cost USD" << "\n";
    for (const auto& m : in.table.media)
        out << std::left << std::setw(14) << m.label << std::right << std::setw(14) << std::fixed
            << std::setprecision(2) << m.usd_per_gb << std::setw(16) << with_commas(storage_cost_usd(in.n, m))
            << "\n";

    const auto& b = j["bottleneck"];
    out << "\nBottleneck (" << b["compute"].get<std::string>() << " vs " << b["link"].get<std::string>()
        << ", link carries " << b["convention"].get<std::string>() << " state per gate):\n";
    std::ostringstream lr, alt, ratio;
    lr << std::setprecision(3) << b["link_gate_rate"].get<double>();
    alt << std::setprecision(3) << b["link_gate_rate_other_convention"].get<double>();
    ratio << std::setprecision(3) << b["ratio"].get<double>();
    out << "  compute gate rate: " << std::fixed << std::setprecision(2) << b["compute_gate_rate"].get<double>()
        << " gates/s\n";
    out << "  link gate rate:    " << lr.str() << " gates/s (" << alt.str() << " with the other convention)\n";
    out << "  compute/link:      " << ratio.str() << "\n";
    out << "  binding constraint: " << b["bottleneck"].get<std::string>() << "\n";
    if (b.contains("required_gate_rate")) {
        out << "  required gate rate: " << std::fixed << std::setprecision(2) << b["required_gate_rate"].get<double>()
            << " gates/s\n";
        out << "  compute " << (b["compute_satisfies"].get<bool>() ? "meets" : "misses") << " the requirement; link "
            << (b["link_satisfies"].get<bool>() ? "meets" : "misses") << " it\n";
    }
}

}  // namespace tierqs::analysis
