#pragma once

// Plain-text circuit files, one gate per line:
//
//   h <q>
//   x <q>
//   u <q> <m00.re> <m00.im> <m01.re> <m01.im> <m10.re> <m10.im> <m11.re> <m11.im>
//   cx <control> <target>
//
// '#' starts a comment. Blank lines are ignored.

#include "tierqs/statecore.hpp"

#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace tierqs {

class CircuitParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline Gate parse_gate_line(const std::string& line, std::size_t lineno = 0)
{
    std::istringstream in(line);
    std::string op;
    in >> op;
    auto fail = [&](const std::string& why) {
        return CircuitParseError("line " + std::to_string(lineno) + ": " + why + ": '" + line + "'");
    };
    auto read_qubit = [&]() {
        long long q = -1;
        if (!(in >> q) || q < 0)
            throw fail("expected a non-negative qubit id");
        return static_cast<unsigned>(q);
    };

    Gate g;
    try {
        if (op == "h" || op == "H") {
            g = Gate::h(read_qubit());
        } else if (op == "x" || op == "X") {
            g = Gate::x(read_qubit());
        } else if (op == "cx" || op == "CX") {
            const unsigned c = read_qubit();
            const unsigned t = read_qubit();
            g = Gate::cx(c, t);
        } else if (op == "u" || op == "U") {
            const unsigned q = read_qubit();
            Matrix2 m;
            for (Amplitude& a : m) {
                double re = 0, im = 0;
                if (!(in >> re >> im))
                    throw fail("u expects 8 reals (row-major re,im)");
                a = {re, im};
            }
            g = Gate::u(q, m);
        } else {
            throw fail("unknown gate '" + op + "'");
        }
    } catch (const GateError& e) {
        throw fail(e.what());
    }
    std::string extra;
    if (in >> extra)
        throw fail("trailing token '" + extra + "'");
    return g;
}

inline std::vector<Gate> parse_circuit(std::istream& in)
{
    std::vector<Gate> gates;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        gates.push_back(parse_gate_line(line, lineno));
    }
    return gates;
}

inline Circuit load_circuit(const std::string& path, unsigned n_qubits)
{
    std::ifstream in(path);
    if (!in)
        throw CircuitParseError("cannot open circuit file '" + path + "'");
    Circuit c{n_qubits, parse_circuit(in)};
    c.validate();
    return c;
}

inline std::string format_gate(const Gate& g)
{
    switch (g.kind) {
    case GateKind::H: return "h " + std::to_string(g.target);
    case GateKind::X: return "x " + std::to_string(g.target);
    case GateKind::CX: return "cx " + std::to_string(g.control) + " " + std::to_string(g.target);
    case GateKind::U1Q: {
        std::string out = "u " + std::to_string(g.target);
        char buf[64];
        for (const Amplitude& a : g.matrix) {
            std::snprintf(buf, sizeof buf, " %.17g %.17g", a.real(), a.imag());
            out += buf;
        }
        return out;
    }
    }
    return {};
}

inline std::string format_circuit(const Circuit& c)
{
    std::string out;
    for (const Gate& g : c.gates)
        out += format_gate(g) + "\n";
    return out;
}

/// The H-then-X pair on one qubit used by the two-node timing experiment.
inline Circuit hx_circuit(unsigned n_qubits, unsigned target = 13)
{
    Circuit c{n_qubits, {Gate::h(target), Gate::x(target)}};
    c.validate();
    return c;
}

/// Random unitary from Euler angles: e^{i a} Rz(b) Ry(c) Rz(d).
template <class Rng>
Matrix2 random_unitary(Rng& rng)
{
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    const double a = angle(rng), b = angle(rng), c = angle(rng), d = angle(rng);
    const Amplitude ph = std::polar(1.0, a);
    const double cc = std::cos(c / 2), sc = std::sin(c / 2);
    return {ph * cc * std::polar(1.0, -(b + d) / 2), ph * -sc * std::polar(1.0, -(b - d) / 2),
            ph * sc * std::polar(1.0, (b - d) / 2), ph * cc * std::polar(1.0, (b + d) / 2)};
}

template <class Rng>
Circuit random_circuit(unsigned n_qubits, std::size_t length, Rng& rng)
{
    Circuit c{n_qubits, {}};
    std::uniform_int_distribution<unsigned> qubit(0, n_qubits - 1);
    std::uniform_int_distribution<int> kind(0, n_qubits >= 2 ? 3 : 2);
    for (std::size_t i = 0; i < length; ++i) {
        const unsigned t = qubit(rng);
        switch (kind(rng)) {
        case 0: c.gates.push_back(Gate::h(t)); break;
        case 1: c.gates.push_back(Gate::x(t)); break;
        case 2: c.gates.push_back(Gate::u(t, random_unitary(rng))); break;
        default: {
            unsigned ctl = qubit(rng);
            while (ctl == t)
                ctl = qubit(rng);
            c.gates.push_back(Gate::cx(ctl, t));
        }
        }
    }
    return c;
}

}  // namespace tierqs
