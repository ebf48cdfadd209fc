#ifndef SESPLAN_FEEDER_HPP
#define SESPLAN_FEEDER_HPP

#include <array>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

/// Radial distribution feeder model: buses, branches, ZIP loads, shunt
/// capacitors, PV units and the substation source, plus ingestion from the
/// feeder text format documented in data/FORMATS.md.
namespace sesplan {

enum class Phase : int { A = 0, B = 1, C = 2 };

constexpr int kNumPhases = 3;

/// Bit mask over phases, bit 0 = A, bit 1 = B, bit 2 = C.
using PhaseMask = std::uint8_t;

constexpr PhaseMask phase_bit(Phase p) { return static_cast<PhaseMask>(1u << static_cast<int>(p)); }
constexpr bool has_phase(PhaseMask m, Phase p) { return (m & phase_bit(p)) != 0; }
constexpr PhaseMask kAllPhases = 0x7;

int phase_count(PhaseMask m);
std::string phase_mask_to_string(PhaseMask m);
PhaseMask phase_mask_from_string(const std::string& s);  // throws FeederError
Phase phase_from_char(char c);

/// Error raised by feeder parsing and validation. Syntax errors carry the
/// 1-based line number of the offending record (0 for semantic errors).
class FeederError : public std::runtime_error {
public:
    explicit FeederError(const std::string& msg, int line = 0)
        : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg),
          line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

struct Bus {
    std::string id;
    PhaseMask phases = kAllPhases;
    double base_kv = 0.0;  // line-to-neutral kV
    double v_min = 0.95;   // per unit
    double v_max = 1.05;
};

/// Series element between two buses. The impedance is a 3x3 complex ohm
/// matrix; rows/columns of absent phases are zero. `tap` models a fixed-tap
/// ideal regulator on the from side: V_to = V_from / tap - Z * I.
struct Branch {
    std::string from_bus;
    std::string to_bus;
    PhaseMask phases = kAllPhases;
    std::array<std::array<std::complex<double>, 3>, 3> z_ohm{};
    double ampacity_kva = 0.0;  // thermal limit per phase
    double tap = 1.0;
};

/// Single-phase ZIP load. zip = (constant-impedance, constant-current,
/// constant-power) fractions, sum 1.
struct Load {
    std::string bus;
    Phase phase = Phase::A;
    double p_kw = 0.0;
    double q_kvar = 0.0;
    std::array<double, 3> zip{0.0, 0.0, 1.0};
};

/// Shunt capacitor, constant admittance sized to inject q_kvar at nominal
/// voltage.
struct ShuntCapacitor {
    std::string bus;
    Phase phase = Phase::A;
    double q_kvar = 0.0;
};

struct Source {
    std::string bus;
    double voltage_pu = 1.0;
    double s_min_kva = 0.0;
    double s_max_kva = 0.0;
};

struct PvUnit {
    std::string bus;
    double rating_kva = 0.0;
    double max_kw = 0.0;
};

/// Immutable after construction/parsing; safe to share read-only across
/// evaluation workers.
struct Feeder {
    std::vector<Bus> buses;
    std::vector<Branch> branches;  // normalized parent->child, breadth-first
    std::vector<Load> loads;
    std::vector<ShuntCapacitor> shunt_capacitors;
    Source source;
    std::vector<PvUnit> pv_units;

    int bus_index(const std::string& id) const;  // -1 when unknown
    const Bus& bus(const std::string& id) const; // throws FeederError
    int source_index() const { return bus_index(source.bus); }

    /// Rebuilds the id lookup and checks every invariant (unique ids,
    /// dangling references, phase consistency, radial topology).
    /// Normalizes branch orientation to parent->child in breadth-first
    /// order. Throws FeederError on the first violated invariant.
    void validate_and_normalize();

private:
    std::unordered_map<std::string, int> index_;
};

/// Parses the feeder text format. All invariants are checked; the returned
/// feeder is normalized (branches parent->child in breadth-first order).
Feeder parse_feeder(const std::string& text);

/// Inverse of parse_feeder: emits text that parses back to an identical
/// feeder.
std::string serialize_feeder(const Feeder& f);

/// Buses carrying all three phases, source excluded, sorted by id.
/// These are the eligible storage sites.
std::vector<std::string> candidate_nodes(const Feeder& f);

/// Breadth-first branch order from the source, plus the parent bus of every
/// bus (-1 for the source). Proves the tree property: |branches| equals
/// |buses| - 1 and every bus is reachable.
struct RadialOrder {
    std::vector<int> branch_order;   // indices into f.branches, root to leaf
    std::vector<int> parent_branch;  // per bus: branch connecting to parent, -1 at source
    std::vector<bool> flipped;       // per branch: true when file orientation was child->parent
};

/// Throws FeederError ("cycle detected ..." / "not radial ...") naming the
/// offending element when the branch graph is not a spanning tree rooted at
/// the source.
RadialOrder validate_radial(const Feeder& f);

}  // namespace sesplan

#endif  // SESPLAN_FEEDER_HPP
