#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "acpf_adv/layout.hpp"

namespace acpf_adv {

struct NewtonOptions {
    double tol = 1e-8;  // infinity norm of the power mismatch, per-unit
    int max_iter = 20;
};

struct PfSolution {
    Vector state;  // [theta_0..theta_{n-1}, v_0..v_{n-1}], fixed entries filled from x
    PfOutput output;
    double residual_norm = 0.0;
    int iterations = 0;
    bool converged = false;
    std::string diagnostic;  // empty unless something went wrong
};

nlohmann::json to_json(const PfSolution& sol);
PfSolution pf_solution_from_json(const nlohmann::json& j);

struct BranchFlow {
    double p_from = 0.0;
    double q_from = 0.0;
    double p_to = 0.0;
    double q_to = 0.0;
};

/// Bus admittance matrix and power-flow equations of one GridCase.
///
/// The state vector is the full polar state (2 * n_bus). The residual has
/// one active-power row per non-REF bus followed by one reactive-power row
/// per PQ bus, both in bus order. Quantities that the input x fixes (REF
/// angle, REF and PV magnitudes) are always read from x; the corresponding
/// state entries are ignored and their Jacobian columns are zero.
class PowerFlow {
  public:
    explicit PowerFlow(const GridCase& grid);

    const GridCase& grid() const { return grid_; }
    const PfLayout& layout() const { return layout_; }
    const Matrix& g_bus() const { return g_; }
    const Matrix& b_bus() const { return b_; }

    std::size_t n_residual() const { return p_rows_.size() + q_rows_.size(); }
    std::size_t state_dim() const { return 2 * n_; }
    /// State positions solved for by Newton, in residual-compatible order.
    const std::vector<std::size_t>& unknowns() const { return unknowns_; }

    /// Flat start: angles 0, magnitudes 1, fixed entries taken from x.
    Vector flat_start(const PfInput& x) const;

    Vector mismatch(const Vector& state, const PfInput& x) const;
    Matrix jacobian_state(const Vector& state, const PfInput& x) const;
    Matrix jacobian_input(const Vector& state, const PfInput& x) const;

    PfSolution solve(const PfInput& x, const std::optional<Vector>& init = std::nullopt,
                     const NewtonOptions& options = {}) const;

    /// dy_PF/dx at a converged solution via the implicit function theorem.
    Matrix output_jacobian(const PfSolution& solution, const PfInput& x) const;

    /// Outputs implied by a state (no solve).
    PfOutput extract_output(const Vector& state, const PfInput& x) const;

    /// Calculated net injections (P, Q) at every bus.
    std::pair<Vector, Vector> injections(const Vector& state, const PfInput& x) const;

    std::vector<BranchFlow> branch_flows(const Vector& state, const PfInput& x) const;

    /// Sum of generation minus load minus series/shunt losses, with losses
    /// taken from branch flows. Zero at a solved state.
    double conservation_error(const Vector& state, const PfInput& x) const;

    /// Full complex power balance at every bus given an input and a predicted
    /// output: returns [dP_0..dP_{n-1}, dQ_0..dQ_{n-1}] where the bus state
    /// and any unspecified injections are read from y.
    Vector balance_mismatch(const PfInput& x, const PfOutput& y) const;
    /// d balance_mismatch / d y.
    Matrix balance_jacobian_output(const PfInput& x, const PfOutput& y) const;

    /// Residual rows whose Jacobian entries w.r.t. unknowns are all zero.
    std::vector<std::string> singular_rows(const Vector& state, const PfInput& x) const;
    std::string residual_row_name(std::size_t row) const;

  private:
    struct PowerDerivatives {
        Vector p, q;
        Matrix dp_dth, dp_dv, dq_dth, dq_dv;
    };

    Vector effective(const Vector& state, const PfInput& x) const;
    PowerDerivatives power_derivatives(const Vector& eff) const;
    void check_dims(const Vector& state, const PfInput& x) const;

    GridCase grid_;
    PfLayout layout_;
    std::size_t n_;
    std::size_t ref_;
    Matrix g_, b_;
    std::vector<std::size_t> p_rows_;  // bus positions with a P residual
    std::vector<std::size_t> q_rows_;  // bus positions with a Q residual
    std::vector<std::size_t> p_spec_;  // input coordinate specifying each P row
    std::vector<std::size_t> q_spec_;
    std::vector<std::size_t> unknowns_;
    // For each bus: input coordinate fixing its angle / magnitude, or npos.
    std::vector<std::size_t> ang_input_, mag_input_;
};

// Free-function forms of the PowerFlow members.
Vector mismatch(const GridCase& grid, const Vector& state, const PfInput& x);
Matrix jacobian_state(const GridCase& grid, const Vector& state, const PfInput& x);
Matrix jacobian_input(const GridCase& grid, const Vector& state, const PfInput& x);
PfSolution solve_pf(const GridCase& grid, const PfInput& x, const std::optional<Vector>& init = std::nullopt,
                    const NewtonOptions& options = {});
Matrix pf_output_jacobian(const GridCase& grid, const PfSolution& solution, const PfInput& x);

}  // namespace acpf_adv
