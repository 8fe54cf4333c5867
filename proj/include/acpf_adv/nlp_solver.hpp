#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "acpf_adv/layout.hpp"

namespace acpf_adv {

struct ObjectiveEval {
    double value = 0.0;
    Vector gradient;
};

struct ConstraintEval {
    Vector values;    // g(x), feasible when <= 0
    Matrix jacobian;  // m x n
};

using ObjectiveFn = std::function<ObjectiveEval(const Vector&)>;
using ConstraintFn = std::function<ConstraintEval(const Vector&)>;

/// min f(x) s.t. g(x) <= 0, lower <= x <= upper.
struct NlpProblem {
    Vector lower;
    Vector upper;
    Vector x0;
    ObjectiveFn objective;
    std::size_t n_constraints = 0;
    ConstraintFn constraints;  // may be empty when n_constraints == 0

    std::size_t dimension() const { return static_cast<std::size_t>(x0.size()); }
};

struct SolverConfig {
    double tolerance = 1e-6;             // scaled KKT residual for Optimal
    double acceptable_tolerance = 1e-4;  // KKT and violation for AcceptablyOptimal
    int max_outer_iterations = 50;
    int max_inner_iterations = 500;  // total over all outer iterations
    double penalty_growth = 10.0;
    double initial_penalty = 10.0;
    double max_penalty = 1e10;
    double max_multiplier = 1e8;
    int lbfgs_memory = 10;
    bool gradient_audit = true;
    double audit_tolerance = 1e-5;
};

nlohmann::json to_json(const SolverConfig& c);
SolverConfig solver_config_from_json(const nlohmann::json& j);

enum class SolverStatus { Optimal, AcceptablyOptimal, Infeasible, IterLimit, NumericFailure };

std::string_view to_string(SolverStatus s);
SolverStatus solver_status_from_string(std::string_view text);
/// Optimal or AcceptablyOptimal.
bool is_converged(SolverStatus s);

struct TraceRow {
    int outer = 0;
    double penalty = 0.0;
    double max_violation = 0.0;
    double objective = 0.0;
    double kkt_residual = 0.0;
    int inner_iterations = 0;
};

struct SolverResult {
    Vector x;
    Vector multipliers;
    SolverStatus status = SolverStatus::IterLimit;
    double objective = 0.0;
    double max_violation = 0.0;
    double kkt_residual = 0.0;
    int outer_iterations = 0;
    int inner_iterations = 0;
    std::vector<TraceRow> trace;
    std::string message;
};

SolverResult minimize(const NlpProblem& problem, const SolverConfig& config = {});

struct InnerOptions {
    double tolerance = 1e-8;  // infinity norm of the projected gradient
    int max_iterations = 500;
    int memory = 10;
};

struct InnerResult {
    Vector x;
    double value = 0.0;
    Vector gradient;
    double projected_gradient_norm = 0.0;
    int iterations = 0;
    bool converged = false;
    bool line_search_failed = false;
    bool non_finite = false;  // the line search met NaN/inf values
};

/// Projected L-BFGS on the box [lower, upper] with an Armijo backtracking
/// search along the projected path.
InnerResult inner_solve(const ObjectiveFn& f, const Vector& lower, const Vector& upper, const Vector& x0,
                        const InnerOptions& options = {});

/// Max of scaled stationarity, primal violation and complementarity. Zero at
/// exact KKT points. `multipliers` has one entry per inequality.
double kkt_residual(const NlpProblem& problem, const Vector& x, const Vector& multipliers);

/// Projected gradient x - P(x - grad), infinity norm.
double projected_gradient_norm(const Vector& x, const Vector& gradient, const Vector& lower, const Vector& upper);

/// Throws NumericError when analytic derivatives disagree with central
/// differences beyond `rel_tol` at x. Coordinates with lower == upper are skipped.
void audit_gradients(const NlpProblem& problem, const Vector& x, double rel_tol);

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace);

}  // namespace acpf_adv
