#include "sesplan/feeder.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <deque>
#include <optional>
#include <sstream>

namespace sesplan {

int phase_count(PhaseMask m) {
    int n = 0;
    for (int p = 0; p < kNumPhases; ++p)
        if (m & (1u << p)) ++n;
    return n;
}

std::string phase_mask_to_string(PhaseMask m) {
    std::string s;
    if (m & phase_bit(Phase::A)) s += 'A';
    if (m & phase_bit(Phase::B)) s += 'B';
    if (m & phase_bit(Phase::C)) s += 'C';
    return s;
}

Phase phase_from_char(char c) {
    switch (c) {
        case 'A': case 'a': return Phase::A;
        case 'B': case 'b': return Phase::B;
        case 'C': case 'c': return Phase::C;
        default: throw FeederError(std::string("invalid phase '") + c + "'");
    }
}

PhaseMask phase_mask_from_string(const std::string& s) {
    if (s.empty()) throw FeederError("empty phase set");
    PhaseMask m = 0;
    for (char c : s) {
        PhaseMask bit = phase_bit(phase_from_char(c));
        if (m & bit) throw FeederError("duplicate phase in '" + s + "'");
        m |= bit;
    }
    return m;
}

int Feeder::bus_index(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? -1 : it->second;
}

const Bus& Feeder::bus(const std::string& id) const {
    int i = bus_index(id);
    if (i < 0) throw FeederError("unknown bus '" + id + "'");
    return buses[static_cast<size_t>(i)];
}

namespace {

bool finite(const std::complex<double>& z) {
    return std::isfinite(z.real()) && std::isfinite(z.imag());
}

void check_bus(const Bus& b) {
    if (b.id.empty()) throw FeederError("bus with empty id");
    if (b.phases == 0) throw FeederError("bus '" + b.id + "' has empty phase set");
    if (!(b.base_kv > 0.0)) throw FeederError("bus '" + b.id + "': base_kv must be > 0");
    if (!(0.0 < b.v_min && b.v_min < b.v_max))
        throw FeederError("bus '" + b.id + "': need 0 < v_min < v_max");
}

void check_branch(const Branch& br) {
    if (br.phases == 0)
        throw FeederError("branch '" + br.from_bus + "' -> '" + br.to_bus + "' has empty phase set");
    for (int r = 0; r < kNumPhases; ++r)
        for (int c = 0; c < kNumPhases; ++c)
            if (!finite(br.z_ohm[r][c]))
                throw FeederError("branch '" + br.from_bus + "' -> '" + br.to_bus +
                                  "': impedance entry not finite");
    for (int p = 0; p < kNumPhases; ++p)
        if (has_phase(br.phases, static_cast<Phase>(p)) && br.z_ohm[p][p].real() < 0.0)
            throw FeederError("branch '" + br.from_bus + "' -> '" + br.to_bus +
                              "': negative series resistance");
    if (!(br.ampacity_kva > 0.0))
        throw FeederError("branch '" + br.from_bus + "' -> '" + br.to_bus +
                          "': ampacity_kva must be > 0");
    if (!(br.tap > 0.0))
        throw FeederError("branch '" + br.from_bus + "' -> '" + br.to_bus + "': tap must be > 0");
}

void check_load(const Load& ld) {
    double sum = 0.0;
    for (double w : ld.zip) {
        if (!(w >= 0.0 && w <= 1.0))
            throw FeederError("load at bus '" + ld.bus + "': ZIP weight outside [0,1]");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw FeederError("load at bus '" + ld.bus + "': ZIP weights sum to " +
                          std::to_string(sum) + ", expected 1");
    if (!(ld.p_kw >= 0.0)) throw FeederError("load at bus '" + ld.bus + "': p_kw must be >= 0");
    if (!std::isfinite(ld.p_kw) || !std::isfinite(ld.q_kvar))
        throw FeederError("load at bus '" + ld.bus + "': non-finite demand");
}

}  // namespace

RadialOrder validate_radial(const Feeder& f) {
    const size_t nb = f.buses.size();
    std::unordered_map<std::string, int> index;
    for (size_t i = 0; i < nb; ++i) {
        auto [it, fresh] = index.emplace(f.buses[i].id, static_cast<int>(i));
        if (!fresh) throw FeederError("duplicate bus id '" + f.buses[i].id + "'");
    }
    auto idx_of = [&](const std::string& id, const Branch& br) {
        auto it = index.find(id);
        if (it == index.end())
            throw FeederError("dangling bus id '" + id + "' in branch '" + br.from_bus +
                              "' -> '" + br.to_bus + "'");
        return it->second;
    };

    for (const Branch& br : f.branches)
        if (br.from_bus == br.to_bus)
            throw FeederError("cycle detected: branch '" + br.from_bus + "' -> '" + br.to_bus +
                              "' is a self-loop");

    auto src_it = index.find(f.source.bus);
    if (src_it == index.end())
        throw FeederError("dangling bus id '" + f.source.bus + "' in source record");
    const int root = src_it->second;

    // adjacency: bus -> (neighbor bus, branch index)
    std::vector<std::vector<std::pair<int, int>>> adj(nb);
    for (size_t bi = 0; bi < f.branches.size(); ++bi) {
        const Branch& br = f.branches[bi];
        int u = idx_of(br.from_bus, br);
        int v = idx_of(br.to_bus, br);
        adj[u].emplace_back(v, static_cast<int>(bi));
        adj[v].emplace_back(u, static_cast<int>(bi));
    }

    RadialOrder ord;
    ord.parent_branch.assign(nb, -1);
    ord.flipped.assign(f.branches.size(), false);
    std::vector<bool> seen(nb, false), used(f.branches.size(), false);
    std::deque<int> queue{root};
    seen[static_cast<size_t>(root)] = true;
    while (!queue.empty()) {
        int u = queue.front();
        queue.pop_front();
        for (auto [v, bi] : adj[u]) {
            if (used[static_cast<size_t>(bi)]) continue;
            if (seen[static_cast<size_t>(v)]) {
                const Branch& br = f.branches[static_cast<size_t>(bi)];
                throw FeederError("not radial: branch '" + br.from_bus + "' -> '" + br.to_bus +
                                  "' creates a cycle");
            }
            used[static_cast<size_t>(bi)] = true;
            seen[static_cast<size_t>(v)] = true;
            ord.parent_branch[static_cast<size_t>(v)] = bi;
            ord.branch_order.push_back(bi);
            ord.flipped[static_cast<size_t>(bi)] =
                (f.branches[static_cast<size_t>(bi)].to_bus == f.buses[static_cast<size_t>(u)].id);
            queue.push_back(v);
        }
    }
    for (size_t i = 0; i < nb; ++i)
        if (!seen[i])
            throw FeederError("not radial: bus '" + f.buses[i].id + "' unreachable from source");
    if (ord.branch_order.size() != f.branches.size()) {
        // every branch with both ends visited was either used or reported
        throw FeederError("not radial: branch count " + std::to_string(f.branches.size()) +
                          " does not match bus count " + std::to_string(nb) + " minus one");
    }
    return ord;
}

void Feeder::validate_and_normalize() {
    if (buses.empty()) throw FeederError("feeder has no buses");
    index_.clear();
    for (size_t i = 0; i < buses.size(); ++i) {
        check_bus(buses[i]);
        auto [it, fresh] = index_.emplace(buses[i].id, static_cast<int>(i));
        if (!fresh) throw FeederError("duplicate bus id '" + buses[i].id + "'");
    }
    if (source.bus.empty()) throw FeederError("missing source record");
    if (bus_index(source.bus) < 0)
        throw FeederError("dangling bus id '" + source.bus + "' in source record");
    if (!(source.voltage_pu > 0.8 && source.voltage_pu < 1.2))
        throw FeederError("source voltage_pu must lie in (0.8, 1.2)");
    if (!(source.s_min_kva <= source.s_max_kva))
        throw FeederError("source s_min_kva must not exceed s_max_kva");

    for (const Branch& br : branches) {
        check_branch(br);
        for (const std::string* end : {&br.from_bus, &br.to_bus}) {
            int bi = bus_index(*end);
            if (bi < 0)
                throw FeederError("dangling bus id '" + *end + "' in branch '" + br.from_bus +
                                  "' -> '" + br.to_bus + "'");
            PhaseMask bus_ph = buses[static_cast<size_t>(bi)].phases;
            if ((br.phases & ~bus_ph) != 0)
                throw FeederError("branch '" + br.from_bus + "' -> '" + br.to_bus +
                                  "' carries phase " +
                                  phase_mask_to_string(br.phases & ~bus_ph) +
                                  " missing at bus '" + *end + "'");
        }
    }
    for (const Load& ld : loads) {
        check_load(ld);
        int bi = bus_index(ld.bus);
        if (bi < 0) throw FeederError("dangling bus id '" + ld.bus + "' in load record");
        if (!has_phase(buses[static_cast<size_t>(bi)].phases, ld.phase))
            throw FeederError("load at bus '" + ld.bus + "' references phase " +
                              phase_mask_to_string(phase_bit(ld.phase)) + " not present at the bus");
    }
    for (const ShuntCapacitor& sc : shunt_capacitors) {
        int bi = bus_index(sc.bus);
        if (bi < 0) throw FeederError("dangling bus id '" + sc.bus + "' in capacitor record");
        if (!has_phase(buses[static_cast<size_t>(bi)].phases, sc.phase))
            throw FeederError("capacitor at bus '" + sc.bus + "' references phase " +
                              phase_mask_to_string(phase_bit(sc.phase)) +
                              " not present at the bus");
        if (!(sc.q_kvar > 0.0))
            throw FeederError("capacitor at bus '" + sc.bus + "': q_kvar must be > 0");
    }
    for (const PvUnit& pv : pv_units) {
        if (bus_index(pv.bus) < 0)
            throw FeederError("dangling bus id '" + pv.bus + "' in pv record");
        if (!(pv.rating_kva > 0.0) || !(pv.max_kw > 0.0) || pv.max_kw > pv.rating_kva)
            throw FeederError("pv at bus '" + pv.bus + "': need 0 < max_kw <= rating_kva");
    }

    RadialOrder ord = validate_radial(*this);

    // Normalize: breadth-first order, from_bus on the source side.
    std::vector<Branch> ordered;
    ordered.reserve(branches.size());
    for (int bi : ord.branch_order) {
        Branch br = branches[static_cast<size_t>(bi)];
        if (ord.flipped[static_cast<size_t>(bi)]) {
            if (br.tap != 1.0)
                throw FeederError("branch '" + br.from_bus + "' -> '" + br.to_bus +
                                  "': tapped branches must be written source side first");
            std::swap(br.from_bus, br.to_bus);
        }
        ordered.push_back(std::move(br));
    }
    branches = std::move(ordered);

    // every phase of a child bus must be energized by its parent branch
    for (const Branch& br : branches) {
        PhaseMask child = buses[static_cast<size_t>(bus_index(br.to_bus))].phases;
        if ((child & ~br.phases) != 0)
            throw FeederError("branch '" + br.from_bus + "' -> '" + br.to_bus +
                              "' does not energize phase " +
                              phase_mask_to_string(child & ~br.phases) + " of bus '" +
                              br.to_bus + "'");
    }
}

// ---------------------------------------------------------------------------
// Text format
// ---------------------------------------------------------------------------

namespace {

struct Field {
    std::string text;
    int column;  // 1-based column of the first character
};

std::vector<Field> split_fields(const std::string& line) {
    std::vector<Field> out;
    size_t start = 0;
    while (true) {
        size_t comma = line.find(',', start);
        std::string raw = line.substr(start, comma == std::string::npos ? comma : comma - start);
        size_t b = raw.find_first_not_of(" \t");
        size_t e = raw.find_last_not_of(" \t");
        Field fld;
        fld.text = (b == std::string::npos) ? std::string() : raw.substr(b, e - b + 1);
        fld.column = static_cast<int>(start + (b == std::string::npos ? 0 : b) + 1);
        out.push_back(std::move(fld));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

double parse_number(const Field& f, int line) {
    double v = 0.0;
    const char* first = f.text.data();
    const char* last = first + f.text.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last)
        throw FeederError("column " + std::to_string(f.column) + ": expected a number, got '" +
                          f.text + "'", line);
    return v;
}

void require_fields(const std::vector<Field>& fs, size_t min, size_t max, const char* what,
                    int line) {
    if (fs.size() < min || fs.size() > max)
        throw FeederError(std::string(what) + " record needs " + std::to_string(min) +
                          (max > min ? ".." + std::to_string(max) : "") + " fields, got " +
                          std::to_string(fs.size()), line);
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

Feeder parse_feeder(const std::string& text) {
    Feeder f;
    bool have_source = false;

    enum class Section { None, Bus, Branch, Load, Capacitor, Source, Pv };
    Section section = Section::None;

    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();
        size_t hash = raw.find('#');
        std::string line = hash == std::string::npos ? raw : raw.substr(0, hash);
        size_t b = line.find_first_not_of(" \t");
        if (b == std::string::npos) continue;
        size_t e = line.find_last_not_of(" \t");
        line = line.substr(b, e - b + 1);

        if (line.front() == '[') {
            if (line.back() != ']')
                throw FeederError("column " + std::to_string(b + 1) + ": unterminated section header",
                                  lineno);
            std::string name = line.substr(1, line.size() - 2);
            if (name == "bus") section = Section::Bus;
            else if (name == "branch") section = Section::Branch;
            else if (name == "load") section = Section::Load;
            else if (name == "capacitor") section = Section::Capacitor;
            else if (name == "source") section = Section::Source;
            else if (name == "pv") section = Section::Pv;
            else throw FeederError("unknown section '" + name + "'", lineno);
            continue;
        }
        if (section == Section::None)
            throw FeederError("record before any section header", lineno);

        std::vector<Field> fs = split_fields(line);
        switch (section) {
            case Section::Bus: {
                require_fields(fs, 5, 5, "bus", lineno);
                Bus bus;
                bus.id = fs[0].text;
                try {
                    bus.phases = phase_mask_from_string(fs[1].text);
                } catch (const FeederError& err) {
                    throw FeederError("column " + std::to_string(fs[1].column) + ": " + err.what(),
                                      lineno);
                }
                bus.base_kv = parse_number(fs[2], lineno);
                bus.v_min = parse_number(fs[3], lineno);
                bus.v_max = parse_number(fs[4], lineno);
                f.buses.push_back(std::move(bus));
                break;
            }
            case Section::Branch: {
                require_fields(fs, 6, 9, "branch", lineno);
                Branch br;
                br.from_bus = fs[0].text;
                br.to_bus = fs[1].text;
                try {
                    br.phases = phase_mask_from_string(fs[2].text);
                } catch (const FeederError& err) {
                    throw FeederError("column " + std::to_string(fs[2].column) + ": " + err.what(),
                                      lineno);
                }
                br.ampacity_kva = parse_number(fs[3], lineno);
                double rs = parse_number(fs[4], lineno);
                double xs = parse_number(fs[5], lineno);
                double rm = fs.size() > 6 ? parse_number(fs[6], lineno) : 0.0;
                double xm = fs.size() > 7 ? parse_number(fs[7], lineno) : 0.0;
                br.tap = fs.size() > 8 ? parse_number(fs[8], lineno) : 1.0;
                for (int r = 0; r < kNumPhases; ++r) {
                    if (!has_phase(br.phases, static_cast<Phase>(r))) continue;
                    for (int c = 0; c < kNumPhases; ++c) {
                        if (!has_phase(br.phases, static_cast<Phase>(c))) continue;
                        br.z_ohm[r][c] = (r == c) ? std::complex<double>(rs, xs)
                                                  : std::complex<double>(rm, xm);
                    }
                }
                f.branches.push_back(std::move(br));
                break;
            }
            case Section::Load: {
                require_fields(fs, 4, 7, "load", lineno);
                Load ld;
                ld.bus = fs[0].text;
                if (fs[1].text.size() != 1)
                    throw FeederError("column " + std::to_string(fs[1].column) +
                                      ": load phase must be a single letter", lineno);
                ld.phase = phase_from_char(fs[1].text[0]);
                ld.p_kw = parse_number(fs[2], lineno);
                ld.q_kvar = parse_number(fs[3], lineno);
                if (fs.size() > 4) {
                    if (fs.size() != 7)
                        throw FeederError("load record with ZIP weights needs all three fractions",
                                          lineno);
                    ld.zip = {parse_number(fs[4], lineno), parse_number(fs[5], lineno),
                              parse_number(fs[6], lineno)};
                }
                f.loads.push_back(std::move(ld));
                break;
            }
            case Section::Capacitor: {
                require_fields(fs, 3, 3, "capacitor", lineno);
                ShuntCapacitor sc;
                sc.bus = fs[0].text;
                if (fs[1].text.size() != 1)
                    throw FeederError("column " + std::to_string(fs[1].column) +
                                      ": capacitor phase must be a single letter", lineno);
                sc.phase = phase_from_char(fs[1].text[0]);
                sc.q_kvar = parse_number(fs[2], lineno);
                f.shunt_capacitors.push_back(std::move(sc));
                break;
            }
            case Section::Source: {
                require_fields(fs, 4, 4, "source", lineno);
                if (have_source) throw FeederError("multiple source records", lineno);
                have_source = true;
                f.source.bus = fs[0].text;
                f.source.voltage_pu = parse_number(fs[1], lineno);
                f.source.s_min_kva = parse_number(fs[2], lineno);
                f.source.s_max_kva = parse_number(fs[3], lineno);
                break;
            }
            case Section::Pv: {
                require_fields(fs, 3, 3, "pv", lineno);
                PvUnit pv;
                pv.bus = fs[0].text;
                pv.rating_kva = parse_number(fs[1], lineno);
                pv.max_kw = parse_number(fs[2], lineno);
                f.pv_units.push_back(std::move(pv));
                break;
            }
            case Section::None: break;
        }
    }
    if (!have_source) throw FeederError("missing [source] section");

    f.validate_and_normalize();
    return f;
}

std::string serialize_feeder(const Feeder& f) {
    std::ostringstream out;
    out << "[bus]\n";
    for (const Bus& b : f.buses)
        out << b.id << ", " << phase_mask_to_string(b.phases) << ", " << fmt_double(b.base_kv)
            << ", " << fmt_double(b.v_min) << ", " << fmt_double(b.v_max) << "\n";
    out << "[branch]\n";
    for (const Branch& br : f.branches) {
        // representative self/mutual entries; parse_feeder rebuilds the matrix
        int first = -1, second = -1;
        for (int p = 0; p < kNumPhases; ++p)
            if (has_phase(br.phases, static_cast<Phase>(p))) {
                if (first < 0) first = p;
                else if (second < 0) second = p;
            }
        std::complex<double> zs = br.z_ohm[first][first];
        std::complex<double> zm = second >= 0 ? br.z_ohm[first][second] : std::complex<double>(0, 0);
        out << br.from_bus << ", " << br.to_bus << ", " << phase_mask_to_string(br.phases) << ", "
            << fmt_double(br.ampacity_kva) << ", " << fmt_double(zs.real()) << ", "
            << fmt_double(zs.imag()) << ", " << fmt_double(zm.real()) << ", "
            << fmt_double(zm.imag()) << ", " << fmt_double(br.tap) << "\n";
    }
    if (!f.loads.empty()) {
        out << "[load]\n";
        for (const Load& ld : f.loads)
            out << ld.bus << ", " << phase_mask_to_string(phase_bit(ld.phase)) << ", "
                << fmt_double(ld.p_kw) << ", " << fmt_double(ld.q_kvar) << ", "
                << fmt_double(ld.zip[0]) << ", " << fmt_double(ld.zip[1]) << ", "
                << fmt_double(ld.zip[2]) << "\n";
    }
    if (!f.shunt_capacitors.empty()) {
        out << "[capacitor]\n";
        for (const ShuntCapacitor& sc : f.shunt_capacitors)
            out << sc.bus << ", " << phase_mask_to_string(phase_bit(sc.phase)) << ", "
                << fmt_double(sc.q_kvar) << "\n";
    }
    out << "[source]\n"
        << f.source.bus << ", " << fmt_double(f.source.voltage_pu) << ", "
        << fmt_double(f.source.s_min_kva) << ", " << fmt_double(f.source.s_max_kva) << "\n";
    if (!f.pv_units.empty()) {
        out << "[pv]\n";
        for (const PvUnit& pv : f.pv_units)
            out << pv.bus << ", " << fmt_double(pv.rating_kva) << ", " << fmt_double(pv.max_kw)
                << "\n";
    }
    return out.str();
}

std::vector<std::string> candidate_nodes(const Feeder& f) {
    std::vector<std::string> out;
    for (const Bus& b : f.buses)
        if (b.phases == kAllPhases && b.id != f.source.bus) out.push_back(b.id);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace sesplan
