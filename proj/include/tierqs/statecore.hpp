#pragma once

// Amplitude storage, bit-index algebra and gate kernels.
//
// Amplitudes are std::complex<double>, which the standard lays out as two
// contiguous doubles (re, im). A state of n qubits is 2^n amplitudes in index
// order; on disk that is exactly index * 16 bytes per amplitude.

#include <array>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tierqs {

using Amplitude = std::complex<double>;
using Index = std::uint64_t;

static_assert(sizeof(Amplitude) == 16, "amplitudes serialize as two 8-byte doubles");
static_assert(std::endian::native == std::endian::little, "state files are little-endian");

inline constexpr std::size_t kAmplitudeBytes = sizeof(Amplitude);
inline constexpr unsigned kMaxQubits = 62;

/// Row-major 2x2 complex matrix: {m00, m01, m10, m11}.
using Matrix2 = std::array<Amplitude, 4>;

class GateError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline constexpr Index pow2(unsigned k) { return Index{1} << k; }

inline constexpr bool bit_is_set(Index i, unsigned t) { return ((i >> t) & 1U) != 0; }

enum class GateKind { H, X, U1Q, CX };

struct Gate {
    GateKind kind = GateKind::H;
    unsigned target = 0;
    unsigned control = 0;  // CX only
    Matrix2 matrix{};      // U1Q only

    static Gate h(unsigned q) { return {GateKind::H, q, 0, {}}; }
    static Gate x(unsigned q) { return {GateKind::X, q, 0, {}}; }
    static Gate cx(unsigned control, unsigned target)
    {
        if (control == target)
            throw GateError("cx: control and target must differ (both " + std::to_string(target) + ")");
        return {GateKind::CX, target, control, {}};
    }
    static Gate u(unsigned q, const Matrix2& m);

    /// The 2x2 unitary applied to each (lo, hi) pair. For CX this is X.
    Matrix2 unitary() const;

    /// Short human label: "H q13", "CX q2->q5", ...
    std::string label() const;

    bool operator==(const Gate&) const = default;
};

inline bool is_unitary(const Matrix2& m, double tol = 1e-12)
{
    // (M^dagger M)_{jk} = sum_r conj(M_{rj}) M_{rk}
    for (int j = 0; j < 2; ++j) {
        for (int k = 0; k < 2; ++k) {
            Amplitude acc = std::conj(m[j]) * m[k] + std::conj(m[2 + j]) * m[2 + k];
            Amplitude want = (j == k) ? Amplitude{1.0, 0.0} : Amplitude{0.0, 0.0};
            if (std::abs(acc.real() - want.real()) > tol || std::abs(acc.imag() - want.imag()) > tol)
                return false;
        }
    }
    return true;
}

inline Gate Gate::u(unsigned q, const Matrix2& m)
{
    if (!is_unitary(m))
        throw GateError("u: matrix on qubit " + std::to_string(q) + " is not unitary");
    return {GateKind::U1Q, q, 0, m};
}

inline Matrix2 Gate::unitary() const
{
    const double s = 1.0 / std::sqrt(2.0);
    switch (kind) {
    case GateKind::H:
        return {Amplitude{s, 0}, Amplitude{s, 0}, Amplitude{s, 0}, Amplitude{-s, 0}};
    case GateKind::X:
    case GateKind::CX:
        return {Amplitude{0, 0}, Amplitude{1, 0}, Amplitude{1, 0}, Amplitude{0, 0}};
    case GateKind::U1Q:
        return matrix;
    }
    return matrix;
}

inline std::string Gate::label() const
{
    switch (kind) {
    case GateKind::H: return "H q" + std::to_string(target);
    case GateKind::X: return "X q" + std::to_string(target);
    case GateKind::U1Q: return "U q" + std::to_string(target);
    case GateKind::CX: return "CX q" + std::to_string(control) + "->q" + std::to_string(target);
    }
    return "?";
}

inline void validate_gate(const Gate& g, unsigned n_qubits)
{
    if (g.target >= n_qubits)
        throw GateError(g.label() + ": target " + std::to_string(g.target) + " >= n_qubits " +
                        std::to_string(n_qubits));
    if (g.kind == GateKind::CX) {
        if (g.control >= n_qubits)
            throw GateError(g.label() + ": control " + std::to_string(g.control) + " >= n_qubits " +
                            std::to_string(n_qubits));
        if (g.control == g.target)
            throw GateError(g.label() + ": control equals target");
    }
    if (g.kind == GateKind::U1Q && !is_unitary(g.matrix))
        throw GateError(g.label() + ": matrix is not unitary");
}

struct Circuit {
    unsigned n_qubits = 1;
    std::vector<Gate> gates;

    void validate() const
    {
        if (n_qubits == 0 || n_qubits > kMaxQubits)
            throw GateError("circuit: n_qubits must be in [1, " + std::to_string(kMaxQubits) + "]");
        for (const Gate& g : gates)
            validate_gate(g, n_qubits);
    }
};

class DenseState {
public:
    DenseState() = default;
    explicit DenseState(unsigned n_qubits) : n_qubits_(n_qubits), amps_(check_size(n_qubits)) {}

    unsigned n_qubits() const { return n_qubits_; }
    Index size() const { return amps_.size(); }

    std::span<Amplitude> amplitudes() { return amps_; }
    std::span<const Amplitude> amplitudes() const { return amps_; }

    Amplitude& operator[](Index i) { return amps_[i]; }
    const Amplitude& operator[](Index i) const { return amps_[i]; }

private:
    static std::size_t check_size(unsigned n)
    {
        if (n == 0 || n > 40)
            throw std::invalid_argument("dense state: n_qubits must be in [1, 40], got " + std::to_string(n));
        return static_cast<std::size_t>(pow2(n));
    }

    unsigned n_qubits_ = 0;
    std::vector<Amplitude> amps_;
};

/// Pairs the basis index i (bit t clear) with its partner (bit t set).
inline std::pair<Index, Index> pair_index(Index i, unsigned t)
{
    if (t >= 64)
        throw std::invalid_argument("pair_index: qubit id " + std::to_string(t) + " out of range");
    if (bit_is_set(i, t))
        throw std::invalid_argument("pair_index: index " + std::to_string(i) + " has bit " + std::to_string(t) +
                                    " set");
    return {i, i | pow2(t)};
}

namespace detail {

inline void update_pair(Amplitude& a, Amplitude& b, GateKind kind, const Matrix2& m)
{
    switch (kind) {
    case GateKind::X:
    case GateKind::CX:
        std::swap(a, b);
        return;
    case GateKind::H: {
        // two additions, two multiplications
        const double s = 1.0 / std::sqrt(2.0);
        const Amplitude sum = a + b;
        const Amplitude diff = a - b;
        a = sum * s;
        b = diff * s;
        return;
    }
    case GateKind::U1Q: {
        const Amplitude na = m[0] * a + m[1] * b;
        const Amplitude nb = m[2] * a + m[3] * b;
        a = na;
        b = nb;
        return;
    }
    }
}

inline bool control_passes(const Gate& g, Index global_lo)
{
    return g.kind != GateKind::CX || bit_is_set(global_lo, g.control);
}

}  // namespace detail

/// Reference in-memory application over the whole state.
inline void apply_gate_dense(DenseState& state, const Gate& gate)
{
    validate_gate(gate, state.n_qubits());
    const unsigned t = gate.target;
    const Index n = state.size();
    for (Index i = 0; i < n; ++i) {
        if (bit_is_set(i, t))
            continue;
        auto [lo, hi] = pair_index(i, t);
        if (!detail::control_passes(gate, lo))
            continue;
        detail::update_pair(state[lo], state[hi], gate.kind, gate.matrix);
    }
}

inline bool is_power_of_two(std::uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

/// Intra-chunk mode: the whole pair set of `block` lies inside it (2^t < block length).
inline void apply_gate_chunk(std::span<Amplitude> block, const Gate& gate, Index global_offset)
{
    const Index len = block.size();
    if (!is_power_of_two(len))
        throw std::invalid_argument("chunk kernel: chunk length " + std::to_string(len) + " is not a power of two");
    if (global_offset % len != 0)
        throw std::invalid_argument("chunk kernel: offset " + std::to_string(global_offset) +
                                    " is not a multiple of chunk length " + std::to_string(len));
    const unsigned t = gate.target;
    if (t >= 64 || pow2(t) >= len)
        throw std::invalid_argument("chunk kernel: stride 2^" + std::to_string(t) + " does not fit inside a chunk of " +
                                    std::to_string(len) + " amplitudes");
    const Index stride = pow2(t);
    for (Index base = 0; base < len; base += 2 * stride) {
        for (Index j = base; j < base + stride; ++j) {
            if (!detail::control_passes(gate, global_offset + j))
                continue;
            detail::update_pair(block[j], block[j + stride], gate.kind, gate.matrix);
        }
    }
}

/// Cross-chunk mode: `lo` and `hi` are whole chunks whose offsets differ by 2^t.
inline void apply_gate_chunkpair(std::span<Amplitude> lo, std::span<Amplitude> hi, const Gate& gate,
                                 Index lo_offset)
{
    const Index len = lo.size();
    if (hi.size() != len)
        throw std::invalid_argument("chunk kernel: lo/hi blocks differ in length");
    if (!is_power_of_two(len))
        throw std::invalid_argument("chunk kernel: chunk length " + std::to_string(len) + " is not a power of two");
    if (lo_offset % len != 0)
        throw std::invalid_argument("chunk kernel: offset " + std::to_string(lo_offset) +
                                    " is not a multiple of chunk length " + std::to_string(len));
    const unsigned t = gate.target;
    if (t >= 64 || pow2(t) < len)
        throw std::invalid_argument("chunk kernel: stride 2^" + std::to_string(t) +
                                    " is smaller than the chunk; use intra-chunk mode");
    if (bit_is_set(lo_offset, t))
        throw std::invalid_argument("chunk kernel: lo offset " + std::to_string(lo_offset) + " has bit " +
                                    std::to_string(t) + " set");
    for (Index j = 0; j < len; ++j) {
        if (!detail::control_passes(gate, lo_offset + j))
            continue;
        detail::update_pair(lo[j], hi[j], gate.kind, gate.matrix);
    }
}

inline DenseState init_basis_state(unsigned n_qubits, Index k)
{
    DenseState s(n_qubits);
    if (k >= s.size())
        throw std::invalid_argument("basis index " + std::to_string(k) + " out of range for " +
                                    std::to_string(n_qubits) + " qubits");
    s[k] = Amplitude{1.0, 0.0};
    return s;
}

inline double norm_sq(std::span<const Amplitude> amps)
{
    double acc = 0.0;
    for (const Amplitude& a : amps)
        acc += std::norm(a);
    return acc;
}

inline double norm_sq(const DenseState& s) { return norm_sq(s.amplitudes()); }

}  // namespace tierqs
