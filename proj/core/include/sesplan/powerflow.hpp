#ifndef SESPLAN_POWERFLOW_HPP
#define SESPLAN_POWERFLOW_HPP

#include <complex>
#include <span>
#include <vector>

#include "sesplan/feeder.hpp"
#include "sesplan/violation.hpp"

namespace sesplan {

/// Per-bus per-phase complex power injections (kW + j kvar, positive = into
/// the grid) from PV and storage units at one hour.
class InjectionSet {
public:
    void add(const std::string& bus, Phase phase, double p_kw, double q_kvar);
    /// Splits p/q equally across the given phases.
    void add_spread(const std::string& bus, PhaseMask phases, double p_kw, double q_kvar);
    const std::unordered_map<std::string, std::array<std::complex<double>, 3>>& by_bus() const {
        return by_bus_;
    }
    bool empty() const { return by_bus_.empty(); }

private:
    std::unordered_map<std::string, std::array<std::complex<double>, 3>> by_bus_;
};

/// One converged (or flagged-diverged) snapshot. Voltages are per unit on
/// each bus's own base; branch currents are amperes at the receiving end.
/// Entries for phases absent at a bus/branch are zero.
struct PowerFlowSolution {
    bool converged = false;
    int iterations = 0;
    std::vector<std::array<std::complex<double>, 3>> v_pu;   // [bus]
    std::vector<std::array<std::complex<double>, 3>> i_amp;  // [branch], to side
    double total_loss_kw = 0.0;                 // series I^2 Z sum over branches
    std::complex<double> source_s_kva{0.0, 0.0};  // injected at the source bus
    double load_p_kw = 0.0;       // ZIP load served at solved voltages
    double load_q_kvar = 0.0;
    double cap_q_kvar = 0.0;      // reactive injection of shunt capacitors
    double injection_p_kw = 0.0;  // PV + storage injections
    double injection_q_kvar = 0.0;

    /// Eq.-style power balance residual in kW:
    /// source + injections - served load - losses.
    double power_balance_residual_kw() const {
        return source_s_kva.real() + injection_p_kw - load_p_kw - total_loss_kw;
    }
};

/// Backward/forward sweep solver for one feeder. Construction precomputes
/// the traversal order, voltage bases and load tables; solve() is pure and
/// safe to call concurrently from many threads against one instance.
///
/// Convergence: max per-phase voltage change < 1e-8 pu, at most 100
/// iterations. Non-convergence is reported through the `converged` flag,
/// never as an exception.
class SnapshotSolver {
public:
    explicit SnapshotSolver(const Feeder& f);

    PowerFlowSolution solve(const InjectionSet& inj, double load_scale) const;

    /// Fast path used by the yearly evaluator: injections as a dense
    /// [bus*3+phase] array in volt-amperes, optional warm-start voltages
    /// from a previous solution of the same feeder.
    PowerFlowSolution solve_dense(std::span<const std::complex<double>> inj_va, double load_scale,
                                  const PowerFlowSolution* warm = nullptr) const;

    /// Expands an InjectionSet into the dense VA layout used by solve_dense.
    /// Throws FeederError for buses not in the feeder, injections on absent
    /// phases, or non-finite values.
    std::vector<std::complex<double>> dense_injections(const InjectionSet& inj) const;

    const Feeder& feeder() const { return *feeder_; }

    static constexpr double kTolerancePu = 1e-8;
    static constexpr int kMaxIterations = 100;
    static constexpr double kPowerBaseKva = 100.0;  // per-unit power base

private:
    const Feeder* feeder_;
    int nb_ = 0;
    std::vector<double> base_v_;                      // volts, per bus
    std::vector<PhaseMask> bus_phases_;
    std::vector<int> branch_from_, branch_to_;        // branches are BFS ordered
    struct LoadEntry {
        int bus;
        int phase;
        std::complex<double> s0_va;
        std::array<double, 3> zip;
        double v_nom;
    };
    std::vector<LoadEntry> loads_;
    struct CapEntry {
        int bus;
        int phase;
        double b_siemens;  // Q_var / V_nom^2
    };
    std::vector<CapEntry> caps_;
    int source_bus_ = 0;
};

/// One-shot convenience wrapper around SnapshotSolver.
PowerFlowSolution solve_snapshot(const Feeder& f, const InjectionSet& inj, double load_scale);

/// Total feeder series loss of a converged snapshot, in kW.
/// Throws std::invalid_argument on a diverged solution.
double total_loss(const PowerFlowSolution& sol);

/// Analytic branch-loss formula with a PV term:
///   R (P^2 + Q^2) / V^2
///     + (R / V^2) (Ppv^2 + Qpv^2 - 2 P Ppv - 3 Q Qpv) (G/L)
/// P/Q in kW/kvar, R in ohms, V = v_pu * base_kv (line-to-neutral kV);
/// result in kW. g_over_l is the ratio of the PV bus's distance from the
/// source to total feeder length, in [0, 1].
/// Throws std::domain_error when v_pu <= 0 or base_kv <= 0.
double analytic_pv_loss(double pj_kw, double qj_kvar, double v_pu, double base_kv, double r_ohm,
                        double p_pv_kw, double q_pv_kvar, double g_over_l);

/// Voltage, line-loading and generation-limit excursions of a converged
/// snapshot, one entry per violated bus-phase / branch-phase / source.
/// Throws std::invalid_argument on a diverged solution.
std::vector<LimitViolation> check_limits(const Feeder& f, const PowerFlowSolution& sol);

/// Independent post-hoc KCL check: per node and phase, sums branch currents
/// in/out against the load/injection draw recomputed from the solved
/// voltages. Returns the largest residual magnitude in per unit.
double max_kcl_residual_pu(const Feeder& f, const PowerFlowSolution& sol, const InjectionSet& inj,
                           double load_scale);

/// Tabular debug dump (one row per bus-phase then per branch-phase).
std::string solution_table(const Feeder& f, const PowerFlowSolution& sol);

}  // namespace sesplan

#endif  // SESPLAN_POWERFLOW_HPP
