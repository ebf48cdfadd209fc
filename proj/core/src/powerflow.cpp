#include "sesplan/powerflow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace sesplan {

namespace {

using cd = std::complex<double>;

constexpr double kVaPerKva = 1e3;

// phase rotation for a balanced source: A at 0, B at -120, C at +120 degrees
const std::array<cd, 3> kRotation = {
    cd{1.0, 0.0},
    std::polar(1.0, -2.0 * std::numbers::pi / 3.0),
    std::polar(1.0, 2.0 * std::numbers::pi / 3.0),
};

const char* phase_letter(int p) {
    static const char* names[3] = {"A", "B", "C"};
    return names[p];
}

}  // namespace

const char* violation_kind_name(ViolationKind k) {
    switch (k) {
        case ViolationKind::Voltage: return "voltage";
        case ViolationKind::LineLoading: return "line-loading";
        case ViolationKind::Generation: return "generation";
        case ViolationKind::Soc: return "soc";
    }
    return "?";
}

void InjectionSet::add(const std::string& bus, Phase phase, double p_kw, double q_kvar) {
    by_bus_[bus][static_cast<int>(phase)] += cd{p_kw, q_kvar};
}

void InjectionSet::add_spread(const std::string& bus, PhaseMask phases, double p_kw,
                              double q_kvar) {
    int n = phase_count(phases);
    if (n == 0) throw FeederError("injection at bus '" + bus + "' with empty phase set");
    for (int p = 0; p < kNumPhases; ++p)
        if (has_phase(phases, static_cast<Phase>(p)))
            by_bus_[bus][p] += cd{p_kw / n, q_kvar / n};
}

SnapshotSolver::SnapshotSolver(const Feeder& f) : feeder_(&f) {
    nb_ = static_cast<int>(f.buses.size());
    base_v_.resize(static_cast<size_t>(nb_));
    bus_phases_.resize(static_cast<size_t>(nb_));
    for (int b = 0; b < nb_; ++b) {
        base_v_[static_cast<size_t>(b)] = f.buses[static_cast<size_t>(b)].base_kv * 1e3;
        bus_phases_[static_cast<size_t>(b)] = f.buses[static_cast<size_t>(b)].phases;
    }
    source_bus_ = f.source_index();
    if (source_bus_ < 0) throw FeederError("solver: feeder has no valid source");

    // The feeder must be normalized: branches breadth-first, from_bus on the
    // source side. Verified here so solve() can sweep by plain iteration.
    std::vector<bool> seen(static_cast<size_t>(nb_), false);
    seen[static_cast<size_t>(source_bus_)] = true;
    branch_from_.reserve(f.branches.size());
    branch_to_.reserve(f.branches.size());
    for (const Branch& br : f.branches) {
        int u = f.bus_index(br.from_bus);
        int v = f.bus_index(br.to_bus);
        if (u < 0 || v < 0 || !seen[static_cast<size_t>(u)] || seen[static_cast<size_t>(v)])
            throw FeederError("solver: feeder branches are not in normalized sweep order; "
                              "call validate_and_normalize() first");
        PhaseMask child = f.buses[static_cast<size_t>(v)].phases;
        if ((child & ~br.phases) != 0)
            throw FeederError("branch '" + br.from_bus + "' -> '" + br.to_bus +
                              "' does not energize phase " +
                              phase_mask_to_string(child & ~br.phases) + " of its child bus");
        seen[static_cast<size_t>(v)] = true;
        branch_from_.push_back(u);
        branch_to_.push_back(v);
    }

    for (const Load& ld : f.loads) {
        LoadEntry e;
        e.bus = f.bus_index(ld.bus);
        e.phase = static_cast<int>(ld.phase);
        e.s0_va = cd{ld.p_kw, ld.q_kvar} * kVaPerKva;
        e.zip = ld.zip;
        e.v_nom = base_v_[static_cast<size_t>(e.bus)];
        loads_.push_back(e);
    }
    for (const ShuntCapacitor& sc : f.shunt_capacitors) {
        CapEntry e;
        e.bus = f.bus_index(sc.bus);
        e.phase = static_cast<int>(sc.phase);
        double v_nom = base_v_[static_cast<size_t>(e.bus)];
        e.b_siemens = sc.q_kvar * kVaPerKva / (v_nom * v_nom);
        caps_.push_back(e);
    }
}

std::vector<cd> SnapshotSolver::dense_injections(const InjectionSet& inj) const {
    std::vector<cd> out(static_cast<size_t>(nb_) * 3, cd{0.0, 0.0});
    for (const auto& [bus, per_phase] : inj.by_bus()) {
        int b = feeder_->bus_index(bus);
        if (b < 0) throw FeederError("injection at unknown bus '" + bus + "'");
        for (int p = 0; p < kNumPhases; ++p) {
            cd s = per_phase[static_cast<size_t>(p)];
            if (s == cd{0.0, 0.0}) continue;
            if (!std::isfinite(s.real()) || !std::isfinite(s.imag()))
                throw FeederError("non-finite injection at bus '" + bus + "'");
            if (!has_phase(bus_phases_[static_cast<size_t>(b)], static_cast<Phase>(p)))
                throw FeederError("injection at bus '" + bus + "' on absent phase " +
                                  phase_letter(p));
            out[static_cast<size_t>(b) * 3 + static_cast<size_t>(p)] = s * kVaPerKva;
        }
    }
    return out;
}

PowerFlowSolution SnapshotSolver::solve(const InjectionSet& inj, double load_scale) const {
    std::vector<cd> dense = dense_injections(inj);
    return solve_dense(dense, load_scale, nullptr);
}

PowerFlowSolution SnapshotSolver::solve_dense(std::span<const cd> inj_va, double load_scale,
                                              const PowerFlowSolution* warm) const {
    if (load_scale < 0.0) throw std::invalid_argument("load_scale must be >= 0");
    if (!inj_va.empty() && inj_va.size() != static_cast<size_t>(nb_) * 3)
        throw std::invalid_argument("dense injection array has wrong length");

    const size_t nbr = branch_from_.size();
    const auto& branches = feeder_->branches;

    std::vector<std::array<cd, 3>> V(static_cast<size_t>(nb_));
    const double v_src = feeder_->source.voltage_pu;
    if (warm && warm->v_pu.size() == static_cast<size_t>(nb_)) {
        for (int b = 0; b < nb_; ++b)
            for (int p = 0; p < kNumPhases; ++p)
                V[static_cast<size_t>(b)][static_cast<size_t>(p)] =
                    warm->v_pu[static_cast<size_t>(b)][static_cast<size_t>(p)] *
                    base_v_[static_cast<size_t>(b)];
    } else {
        for (int b = 0; b < nb_; ++b)
            for (int p = 0; p < kNumPhases; ++p)
                V[static_cast<size_t>(b)][static_cast<size_t>(p)] =
                    has_phase(bus_phases_[static_cast<size_t>(b)], static_cast<Phase>(p))
                        ? v_src * base_v_[static_cast<size_t>(b)] * kRotation[static_cast<size_t>(p)]
                        : cd{0.0, 0.0};
    }
    for (int p = 0; p < kNumPhases; ++p)
        V[static_cast<size_t>(source_bus_)][static_cast<size_t>(p)] =
            has_phase(bus_phases_[static_cast<size_t>(source_bus_)], static_cast<Phase>(p))
                ? v_src * base_v_[static_cast<size_t>(source_bus_)] *
                      kRotation[static_cast<size_t>(p)]
                : cd{0.0, 0.0};

    std::vector<std::array<cd, 3>> node_i(static_cast<size_t>(nb_));
    std::vector<std::array<cd, 3>> acc(static_cast<size_t>(nb_));
    std::vector<std::array<cd, 3>> br_i(nbr);

    auto compute_node_currents = [&]() {
        for (auto& a : node_i) a = {cd{}, cd{}, cd{}};
        for (const LoadEntry& ld : loads_) {
            cd v = V[static_cast<size_t>(ld.bus)][static_cast<size_t>(ld.phase)];
            double vm = std::abs(v);
            if (vm < 1e-6 * ld.v_nom) continue;  // collapsed voltage, flagged via divergence
            double r = vm / ld.v_nom;
            cd s = ld.s0_va * load_scale * (ld.zip[0] * r * r + ld.zip[1] * r + ld.zip[2]);
            node_i[static_cast<size_t>(ld.bus)][static_cast<size_t>(ld.phase)] += std::conj(s / v);
        }
        for (const CapEntry& cp : caps_) {
            cd v = V[static_cast<size_t>(cp.bus)][static_cast<size_t>(cp.phase)];
            node_i[static_cast<size_t>(cp.bus)][static_cast<size_t>(cp.phase)] +=
                cd{0.0, cp.b_siemens} * v;
        }
        if (!inj_va.empty()) {
            for (int b = 0; b < nb_; ++b)
                for (int p = 0; p < kNumPhases; ++p) {
                    cd s = inj_va[static_cast<size_t>(b) * 3 + static_cast<size_t>(p)];
                    if (s == cd{0.0, 0.0}) continue;
                    cd v = V[static_cast<size_t>(b)][static_cast<size_t>(p)];
                    double vm = std::abs(v);
                    if (vm < 1e-6 * base_v_[static_cast<size_t>(b)]) continue;
                    node_i[static_cast<size_t>(b)][static_cast<size_t>(p)] -= std::conj(s / v);
                }
        }
    };

    auto backward = [&]() {
        acc = node_i;
        for (size_t bi = nbr; bi-- > 0;) {
            const Branch& br = branches[bi];
            int from = branch_from_[bi];
            int to = branch_to_[bi];
            for (int p = 0; p < kNumPhases; ++p) {
                if (!has_phase(br.phases, static_cast<Phase>(p))) {
                    br_i[bi][static_cast<size_t>(p)] = cd{0.0, 0.0};
                    continue;
                }
                cd i = acc[static_cast<size_t>(to)][static_cast<size_t>(p)];
                br_i[bi][static_cast<size_t>(p)] = i;
                acc[static_cast<size_t>(from)][static_cast<size_t>(p)] += br.tap * i;
            }
        }
    };

    bool converged = false;
    int iterations = 0;
    while (iterations < kMaxIterations) {
        ++iterations;
        compute_node_currents();
        backward();

        double maxdiff = 0.0;
        for (size_t bi = 0; bi < nbr; ++bi) {
            const Branch& br = branches[bi];
            int from = branch_from_[bi];
            int to = branch_to_[bi];
            for (int p = 0; p < kNumPhases; ++p) {
                if (!has_phase(br.phases, static_cast<Phase>(p))) continue;
                cd drop{0.0, 0.0};
                for (int q = 0; q < kNumPhases; ++q)
                    drop += br.z_ohm[static_cast<size_t>(p)][static_cast<size_t>(q)] *
                            br_i[bi][static_cast<size_t>(q)];
                cd v_new = br.tap * V[static_cast<size_t>(from)][static_cast<size_t>(p)] - drop;
                double diff = std::abs(v_new - V[static_cast<size_t>(to)][static_cast<size_t>(p)]) /
                              base_v_[static_cast<size_t>(to)];
                maxdiff = std::max(maxdiff, diff);
                V[static_cast<size_t>(to)][static_cast<size_t>(p)] = v_new;
            }
        }
        if (maxdiff < kTolerancePu) {
            converged = true;
            break;
        }
    }

    // Final backward pass at the settled voltages so that currents, losses
    // and the source injection are all consistent with the reported state.
    compute_node_currents();
    backward();

    PowerFlowSolution sol;
    sol.converged = converged;
    sol.iterations = iterations;
    sol.v_pu.resize(static_cast<size_t>(nb_));
    for (int b = 0; b < nb_; ++b)
        for (int p = 0; p < kNumPhases; ++p)
            sol.v_pu[static_cast<size_t>(b)][static_cast<size_t>(p)] =
                V[static_cast<size_t>(b)][static_cast<size_t>(p)] / base_v_[static_cast<size_t>(b)];
    sol.i_amp = br_i;

    double loss_w = 0.0;
    for (size_t bi = 0; bi < nbr; ++bi) {
        const Branch& br = branches[bi];
        for (int p = 0; p < kNumPhases; ++p) {
            if (!has_phase(br.phases, static_cast<Phase>(p))) continue;
            cd drop{0.0, 0.0};
            for (int q = 0; q < kNumPhases; ++q)
                drop += br.z_ohm[static_cast<size_t>(p)][static_cast<size_t>(q)] *
                        br_i[bi][static_cast<size_t>(q)];
            loss_w += (drop * std::conj(br_i[bi][static_cast<size_t>(p)])).real();
        }
    }
    sol.total_loss_kw = loss_w / kVaPerKva;

    cd s_src{0.0, 0.0};
    for (int p = 0; p < kNumPhases; ++p)
        s_src += V[static_cast<size_t>(source_bus_)][static_cast<size_t>(p)] *
                 std::conj(acc[static_cast<size_t>(source_bus_)][static_cast<size_t>(p)]);
    sol.source_s_kva = s_src / kVaPerKva;

    for (const LoadEntry& ld : loads_) {
        cd v = V[static_cast<size_t>(ld.bus)][static_cast<size_t>(ld.phase)];
        double vm = std::abs(v);
        if (vm < 1e-6 * ld.v_nom) continue;
        double r = vm / ld.v_nom;
        cd s = ld.s0_va * load_scale * (ld.zip[0] * r * r + ld.zip[1] * r + ld.zip[2]);
        sol.load_p_kw += s.real() / kVaPerKva;
        sol.load_q_kvar += s.imag() / kVaPerKva;
    }
    for (const CapEntry& cp : caps_) {
        cd v = V[static_cast<size_t>(cp.bus)][static_cast<size_t>(cp.phase)];
        sol.cap_q_kvar += cp.b_siemens * std::norm(v) / kVaPerKva;
    }
    if (!inj_va.empty())
        for (size_t i = 0; i < inj_va.size(); ++i) {
            sol.injection_p_kw += inj_va[i].real() / kVaPerKva;
            sol.injection_q_kvar += inj_va[i].imag() / kVaPerKva;
        }
    return sol;
}

PowerFlowSolution solve_snapshot(const Feeder& f, const InjectionSet& inj, double load_scale) {
    return SnapshotSolver(f).solve(inj, load_scale);
}

double total_loss(const PowerFlowSolution& sol) {
    if (!sol.converged) throw std::invalid_argument("total_loss: diverged power-flow solution");
    return sol.total_loss_kw;
}

double analytic_pv_loss(double pj_kw, double qj_kvar, double v_pu, double base_kv, double r_ohm,
                        double p_pv_kw, double q_pv_kvar, double g_over_l) {
    if (v_pu <= 0.0) throw std::domain_error("analytic_pv_loss: v_pu must be > 0");
    if (base_kv <= 0.0) throw std::domain_error("analytic_pv_loss: base_kv must be > 0");
    const double v_volts = v_pu * base_kv * 1e3;
    const double v2 = v_volts * v_volts;
    const double p_w = pj_kw * 1e3, q_var = qj_kvar * 1e3;
    const double ppv_w = p_pv_kw * 1e3, qpv_var = q_pv_kvar * 1e3;
    const double base_term = r_ohm * (p_w * p_w + q_var * q_var) / v2;
    const double pv_term = r_ohm / v2 *
                           (ppv_w * ppv_w + qpv_var * qpv_var - 2.0 * p_w * ppv_w -
                            3.0 * q_var * qpv_var) *
                           g_over_l;
    return (base_term + pv_term) / 1e3;
}

std::vector<LimitViolation> check_limits(const Feeder& f, const PowerFlowSolution& sol) {
    if (!sol.converged) throw std::invalid_argument("check_limits: diverged power-flow solution");
    std::vector<LimitViolation> out;

    for (size_t b = 0; b < f.buses.size(); ++b) {
        const Bus& bus = f.buses[b];
        for (int p = 0; p < kNumPhases; ++p) {
            if (!has_phase(bus.phases, static_cast<Phase>(p))) continue;
            double vm = std::abs(sol.v_pu[b][static_cast<size_t>(p)]);
            if (vm < bus.v_min)
                out.push_back({ViolationKind::Voltage, bus.v_min - vm,
                               "bus " + bus.id + " phase " + phase_letter(p)});
            else if (vm > bus.v_max)
                out.push_back({ViolationKind::Voltage, vm - bus.v_max,
                               "bus " + bus.id + " phase " + phase_letter(p)});
        }
    }

    for (size_t bi = 0; bi < f.branches.size(); ++bi) {
        const Branch& br = f.branches[bi];
        int to = f.bus_index(br.to_bus);
        double base_v = f.buses[static_cast<size_t>(to)].base_kv * 1e3;
        for (int p = 0; p < kNumPhases; ++p) {
            if (!has_phase(br.phases, static_cast<Phase>(p))) continue;
            double v_volts = std::abs(sol.v_pu[static_cast<size_t>(to)][static_cast<size_t>(p)]) *
                             base_v;
            double s_kva = v_volts * std::abs(sol.i_amp[bi][static_cast<size_t>(p)]) / 1e3;
            if (s_kva > br.ampacity_kva)
                out.push_back({ViolationKind::LineLoading, s_kva - br.ampacity_kva,
                               "branch " + br.from_bus + "->" + br.to_bus + " phase " +
                                   phase_letter(p)});
        }
    }

    double s_src = std::abs(sol.source_s_kva);
    if (s_src > f.source.s_max_kva)
        out.push_back({ViolationKind::Generation, s_src - f.source.s_max_kva,
                       "source " + f.source.bus});
    else if (s_src < f.source.s_min_kva)
        out.push_back({ViolationKind::Generation, f.source.s_min_kva - s_src,
                       "source " + f.source.bus});
    return out;
}

double max_kcl_residual_pu(const Feeder& f, const PowerFlowSolution& sol, const InjectionSet& inj,
                           double load_scale) {
    SnapshotSolver helper(f);  // for dense injection layout only
    std::vector<cd> inj_va = helper.dense_injections(inj);

    const int nb = static_cast<int>(f.buses.size());
    std::vector<std::array<cd, 3>> residual(static_cast<size_t>(nb), {cd{}, cd{}, cd{}});

    // drawn currents recomputed from the reported voltages
    for (const Load& ld : f.loads) {
        int b = f.bus_index(ld.bus);
        double v_nom = f.buses[static_cast<size_t>(b)].base_kv * 1e3;
        cd v = sol.v_pu[static_cast<size_t>(b)][static_cast<size_t>(ld.phase)] * v_nom;
        double vm = std::abs(v);
        if (vm < 1e-6 * v_nom) continue;
        double r = vm / v_nom;
        cd s = cd{ld.p_kw, ld.q_kvar} * kVaPerKva * load_scale *
               (ld.zip[0] * r * r + ld.zip[1] * r + ld.zip[2]);
        residual[static_cast<size_t>(b)][static_cast<size_t>(ld.phase)] -= std::conj(s / v);
    }
    for (const ShuntCapacitor& sc : f.shunt_capacitors) {
        int b = f.bus_index(sc.bus);
        double v_nom = f.buses[static_cast<size_t>(b)].base_kv * 1e3;
        cd v = sol.v_pu[static_cast<size_t>(b)][static_cast<size_t>(sc.phase)] * v_nom;
        double bsh = sc.q_kvar * kVaPerKva / (v_nom * v_nom);
        residual[static_cast<size_t>(b)][static_cast<size_t>(sc.phase)] -= cd{0.0, bsh} * v;
    }
    for (int b = 0; b < nb; ++b) {
        double v_nom = f.buses[static_cast<size_t>(b)].base_kv * 1e3;
        for (int p = 0; p < kNumPhases; ++p) {
            cd s = inj_va[static_cast<size_t>(b) * 3 + static_cast<size_t>(p)];
            if (s == cd{0.0, 0.0}) continue;
            cd v = sol.v_pu[static_cast<size_t>(b)][static_cast<size_t>(p)] * v_nom;
            if (std::abs(v) < 1e-6 * v_nom) continue;
            residual[static_cast<size_t>(b)][static_cast<size_t>(p)] += std::conj(s / v);
        }
    }

    // branch currents: arrive at the to bus, leave the from bus via the tap
    for (size_t bi = 0; bi < f.branches.size(); ++bi) {
        const Branch& br = f.branches[bi];
        int from = f.bus_index(br.from_bus);
        int to = f.bus_index(br.to_bus);
        for (int p = 0; p < kNumPhases; ++p) {
            cd i = sol.i_amp[bi][static_cast<size_t>(p)];
            residual[static_cast<size_t>(to)][static_cast<size_t>(p)] += i;
            residual[static_cast<size_t>(from)][static_cast<size_t>(p)] -= br.tap * i;
        }
    }

    const int src = f.source_index();
    double worst = 0.0;
    for (int b = 0; b < nb; ++b) {
        if (b == src) continue;  // slack supplies the balance
        double i_base = SnapshotSolver::kPowerBaseKva * kVaPerKva /
                        (f.buses[static_cast<size_t>(b)].base_kv * 1e3);
        for (int p = 0; p < kNumPhases; ++p)
            worst = std::max(worst,
                             std::abs(residual[static_cast<size_t>(b)][static_cast<size_t>(p)]) /
                                 i_base);
    }
    return worst;
}

std::string solution_table(const Feeder& f, const PowerFlowSolution& sol) {
    std::ostringstream out;
    char buf[160];
    out << "kind\telement\tphase\tv_pu\tangle_deg\ti_amp\ts_kva\n";
    for (size_t b = 0; b < f.buses.size(); ++b)
        for (int p = 0; p < kNumPhases; ++p) {
            if (!has_phase(f.buses[b].phases, static_cast<Phase>(p))) continue;
            cd v = sol.v_pu[b][static_cast<size_t>(p)];
            std::snprintf(buf, sizeof buf, "bus\t%s\t%s\t%.6f\t%.3f\t-\t-\n",
                          f.buses[b].id.c_str(), phase_letter(p), std::abs(v),
                          std::arg(v) * 180.0 / std::numbers::pi);
            out << buf;
        }
    for (size_t bi = 0; bi < f.branches.size(); ++bi) {
        const Branch& br = f.branches[bi];
        int to = f.bus_index(br.to_bus);
        double base_v = f.buses[static_cast<size_t>(to)].base_kv * 1e3;
        for (int p = 0; p < kNumPhases; ++p) {
            if (!has_phase(br.phases, static_cast<Phase>(p))) continue;
            cd i = sol.i_amp[bi][static_cast<size_t>(p)];
            double s_kva = std::abs(sol.v_pu[static_cast<size_t>(to)][static_cast<size_t>(p)]) *
                           base_v * std::abs(i) / 1e3;
            std::snprintf(buf, sizeof buf, "branch\t%s->%s\t%s\t-\t-\t%.4f\t%.4f\n",
                          br.from_bus.c_str(), br.to_bus.c_str(), phase_letter(p), std::abs(i),
                          s_kva);
            out << buf;
        }
    }
    std::snprintf(buf, sizeof buf,
                  "total\tloss_kw=%.6f\tsource_kw=%.6f\tsource_kvar=%.6f\titer=%d\tconverged=%d\n",
                  sol.total_loss_kw, sol.source_s_kva.real(), sol.source_s_kva.imag(),
                  sol.iterations, sol.converged ? 1 : 0);
    out << buf;
    return out.str();
}

}  // namespace sesplan
