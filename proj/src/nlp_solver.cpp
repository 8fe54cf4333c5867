#include "acpf_adv/nlp_solver.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <ostream>

#include <fmt/format.h>

#include "acpf_adv/errors.hpp"
#include "acpf_adv/log.hpp"

namespace acpf_adv {

namespace {
using Idx = Eigen::Index;

constexpr double kArmijo = 1e-4;
constexpr double kViolationTol = 1e-6;
constexpr double kDegenerateShift = 1e-12;
constexpr double kScaleMax = 100.0;

Vector clip(const Vector& x, const Vector& lo, const Vector& hi) { return x.cwiseMax(lo).cwiseMin(hi); }

bool finite(const ObjectiveEval& e) { return std::isfinite(e.value) && e.gradient.allFinite(); }

double max_violation(const Vector& g) { return g.size() == 0 ? 0.0 : std::max(0.0, g.maxCoeff()); }

// Multiplier-dependent scaling of the dual quantities.
double dual_scale(const Vector& lambda) {
    if (lambda.size() == 0) return 1.0;
    return std::max(kScaleMax, lambda.lpNorm<1>() / static_cast<double>(lambda.size())) / kScaleMax;
}

double kkt_from_parts(const Vector& x, const Vector& grad_f, const ConstraintEval& c, const Vector& lambda,
                      const Vector& lo, const Vector& hi) {
    Vector grad_l = grad_f;
    if (lambda.size() > 0) grad_l.noalias() += c.jacobian.transpose() * lambda;
    const double sd = dual_scale(lambda);
    const double stationarity = projected_gradient_norm(x, grad_l, lo, hi) / sd;
    double complementarity = 0.0;
    for (Idx j = 0; j < lambda.size(); ++j) complementarity = std::max(complementarity, std::abs(lambda[j] * c.values[j]));
    return std::max({stationarity, max_violation(c.values), complementarity / sd});
}

void check_problem(const NlpProblem& p) {
    const auto n = p.x0.size();
    if (n == 0) throw DimensionError("problem has dimension 0");
    if (p.lower.size() != n || p.upper.size() != n)
        throw DimensionError(fmt::format("bounds have size {}/{} for dimension {}", p.lower.size(), p.upper.size(), n));
    if (!p.objective) throw ConfigError("problem has no objective");
    if (p.n_constraints > 0 && !p.constraints) throw ConfigError("problem declares constraints but no callable");
    for (Idx i = 0; i < n; ++i) {
        if (!(p.lower[i] <= p.upper[i])) throw ConfigError(fmt::format("lower bound exceeds upper bound at {}", i));
        if (!(p.x0[i] >= p.lower[i] && p.x0[i] <= p.upper[i]))
            throw ConfigError(fmt::format("initial point outside bounds at {}", i));
    }
}

ConstraintEval eval_constraints(const NlpProblem& p, const Vector& x) {
    if (p.n_constraints == 0) return {Vector(0), Matrix(0, x.size())};
    auto c = p.constraints(x);
    const auto m = static_cast<Idx>(p.n_constraints);
    if (c.values.size() != m || c.jacobian.rows() != m || c.jacobian.cols() != x.size())
        throw DimensionError(fmt::format("constraint callable returned {} values and a {}x{} Jacobian, expected {}",
                                         c.values.size(), c.jacobian.rows(), c.jacobian.cols(), m));
    return c;
}

// Two-loop recursion restricted to the free coordinates.
struct Memory {
    std::deque<Vector> s, y;
    std::deque<double> rho;
    int capacity = 10;

    void clear() { s.clear(), y.clear(), rho.clear(); }
    bool empty() const { return s.empty(); }
    void push(Vector sv, Vector yv) {
        const double sy = sv.dot(yv);
        if (!(sy > 1e-12 * sv.norm() * yv.norm())) return;
        s.push_back(std::move(sv));
        y.push_back(std::move(yv));
        rho.push_back(1.0 / sy);
        if (static_cast<int>(s.size()) > capacity) s.pop_front(), y.pop_front(), rho.pop_front();
    }
    Vector apply(const Vector& g, const Vector& mask) const {
        Vector q = g.cwiseProduct(mask);
        std::vector<double> alpha(s.size());
        for (std::size_t i = s.size(); i-- > 0;) {
            alpha[i] = rho[i] * s[i].dot(q);
            q -= alpha[i] * y[i];
        }
        const double gamma = s.back().dot(y.back()) / y.back().squaredNorm();
        Vector r = gamma * q.cwiseProduct(mask);
        for (std::size_t i = 0; i < s.size(); ++i) {
            const double beta = rho[i] * y[i].dot(r);
            r += s[i] * (alpha[i] - beta);
        }
        return r.cwiseProduct(mask);
    }
};

}  // namespace

std::string_view to_string(SolverStatus s) {
    switch (s) {
        case SolverStatus::Optimal: return "Optimal";
        case SolverStatus::AcceptablyOptimal: return "AcceptablyOptimal";
        case SolverStatus::Infeasible: return "Infeasible";
        case SolverStatus::IterLimit: return "IterLimit";
        case SolverStatus::NumericFailure: return "NumericFailure";
    }
    return "?";
}

SolverStatus solver_status_from_string(std::string_view text) {
    for (auto s : {SolverStatus::Optimal, SolverStatus::AcceptablyOptimal, SolverStatus::Infeasible,
                   SolverStatus::IterLimit, SolverStatus::NumericFailure})
        if (to_string(s) == text) return s;
    throw ConfigError("unknown solver status '" + std::string(text) + "'");
}

bool is_converged(SolverStatus s) { return s == SolverStatus::Optimal || s == SolverStatus::AcceptablyOptimal; }

nlohmann::json to_json(const SolverConfig& c) {
    return {{"tolerance", c.tolerance},
            {"acceptable_tolerance", c.acceptable_tolerance},
            {"max_outer_iterations", c.max_outer_iterations},
            {"max_inner_iterations", c.max_inner_iterations},
            {"penalty_growth", c.penalty_growth},
            {"initial_penalty", c.initial_penalty},
            {"max_penalty", c.max_penalty},
            {"max_multiplier", c.max_multiplier},
            {"lbfgs_memory", c.lbfgs_memory},
            {"gradient_audit", c.gradient_audit},
            {"audit_tolerance", c.audit_tolerance}};
}

SolverConfig solver_config_from_json(const nlohmann::json& j) {
    SolverConfig c;
    c.tolerance = j.value("tolerance", c.tolerance);
    c.acceptable_tolerance = j.value("acceptable_tolerance", c.acceptable_tolerance);
    c.max_outer_iterations = j.value("max_outer_iterations", c.max_outer_iterations);
    c.max_inner_iterations = j.value("max_inner_iterations", c.max_inner_iterations);
    c.penalty_growth = j.value("penalty_growth", c.penalty_growth);
    c.initial_penalty = j.value("initial_penalty", c.initial_penalty);
    c.max_penalty = j.value("max_penalty", c.max_penalty);
    c.max_multiplier = j.value("max_multiplier", c.max_multiplier);
    c.lbfgs_memory = j.value("lbfgs_memory", c.lbfgs_memory);
    c.gradient_audit = j.value("gradient_audit", c.gradient_audit);
    c.audit_tolerance = j.value("audit_tolerance", c.audit_tolerance);
    if (!(c.tolerance > 0.0) || !(c.acceptable_tolerance >= c.tolerance))
        throw ConfigError("solver tolerances must satisfy 0 < tolerance <= acceptable_tolerance");
    if (c.max_outer_iterations < 1 || c.max_inner_iterations < 1) throw ConfigError("iteration limits must be >= 1");
    if (!(c.penalty_growth > 1.0) || !(c.initial_penalty > 0.0) || !(c.max_penalty >= c.initial_penalty))
        throw ConfigError("penalty settings must satisfy growth > 1 and 0 < initial <= max");
    if (c.lbfgs_memory < 1) throw ConfigError("lbfgs_memory must be >= 1");
    return c;
}

double projected_gradient_norm(const Vector& x, const Vector& gradient, const Vector& lower, const Vector& upper) {
    if (x.size() == 0) return 0.0;
    return (x - clip(x - gradient, lower, upper)).lpNorm<Eigen::Infinity>();
}

InnerResult inner_solve(const ObjectiveFn& f, const Vector& lower, const Vector& upper, const Vector& x0,
                        const InnerOptions& options) {
    const auto n = x0.size();
    if (lower.size() != n || upper.size() != n) throw DimensionError("inner_solve: bounds do not match x0");
    InnerResult res;
    res.x = clip(x0, lower, upper);
    auto cur = f(res.x);
    if (!finite(cur)) {
        res.non_finite = true;
        res.value = cur.value;
        res.gradient = cur.gradient;
        res.line_search_failed = true;
        return res;
    }
    Memory memory;
    memory.capacity = options.memory;
    Vector pinned(n);
    for (Idx i = 0; i < n; ++i) pinned[i] = lower[i] == upper[i] ? 0.0 : 1.0;

    bool retried = false;
    while (true) {
        res.projected_gradient_norm = projected_gradient_norm(res.x, cur.gradient, lower, upper);
        if (res.projected_gradient_norm <= options.tolerance) {
            res.converged = true;
            break;
        }
        if (res.iterations >= options.max_iterations) break;

        // coordinates held at a bound by the gradient are excluded from the step
        Vector mask = pinned;
        for (Idx i = 0; i < n; ++i) {
            if ((res.x[i] <= lower[i] && cur.gradient[i] > 0.0) || (res.x[i] >= upper[i] && cur.gradient[i] < 0.0))
                mask[i] = 0.0;
        }
        Vector d;
        if (memory.empty()) {
            const Vector g = cur.gradient.cwiseProduct(mask);
            d = -g / std::max(1.0, g.lpNorm<Eigen::Infinity>());
        } else {
            d = -memory.apply(cur.gradient, mask);
            if (!(d.dot(cur.gradient) < 0.0)) {
                memory.clear();
                const Vector g = cur.gradient.cwiseProduct(mask);
                d = -g / std::max(1.0, g.lpNorm<Eigen::Infinity>());
            }
        }

        double alpha = 1.0;
        bool accepted = false;
        Vector x_trial;
        ObjectiveEval trial;
        const double flat = 1e-13 * std::max(1.0, std::abs(cur.value));
        for (int ls = 0; ls < 60; ++ls) {
            x_trial = clip(res.x + alpha * d, lower, upper);
            const Vector step = x_trial - res.x;
            if (step.lpNorm<Eigen::Infinity>() == 0.0) break;
            trial = f(x_trial);
            if (!finite(trial)) {
                res.non_finite = true;
                alpha *= 0.5;
                continue;
            }
            const double slope = cur.gradient.dot(step);
            if (trial.value <= cur.value + kArmijo * slope) {
                accepted = true;
                break;
            }
            // near the optimum f is flat to rounding; progress shows in the gradient instead
            if (trial.value <= cur.value + flat &&
                projected_gradient_norm(x_trial, trial.gradient, lower, upper) < res.projected_gradient_norm) {
                accepted = true;
                break;
            }
            // minimizer of the quadratic through f(0), f'(0), f(alpha), safeguarded
            const double curvature = trial.value - cur.value - slope;
            const double ratio = curvature > 0.0 ? -slope / (2.0 * curvature) : 0.5;
            alpha *= std::clamp(ratio, 0.1, 0.5);
        }
        if (!accepted) {
            if (!memory.empty() && !retried) {
                memory.clear();
                retried = true;
                continue;
            }
            res.line_search_failed = true;
            break;
        }
        retried = false;
        memory.push(x_trial - res.x, trial.gradient - cur.gradient);
        res.x = std::move(x_trial);
        cur = std::move(trial);
        ++res.iterations;
    }
    res.value = cur.value;
    res.gradient = std::move(cur.gradient);
    return res;
}

double kkt_residual(const NlpProblem& problem, const Vector& x, const Vector& multipliers) {
    if (x.size() != problem.x0.size() || multipliers.size() != static_cast<Idx>(problem.n_constraints))
        throw DimensionError("kkt_residual: dimensions do not match the problem");
    const auto f = problem.objective(x);
    const auto c = eval_constraints(problem, x);
    return kkt_from_parts(x, f.gradient, c, multipliers, problem.lower, problem.upper);
}

void audit_gradients(const NlpProblem& problem, const Vector& x, double rel_tol) {
    const auto f0 = problem.objective(x);
    const auto c0 = eval_constraints(problem, x);
    const auto m = static_cast<Idx>(problem.n_constraints);
    const double f_scale = std::max(1.0, f0.gradient.lpNorm<Eigen::Infinity>());
    Vector c_scale(m);
    for (Idx j = 0; j < m; ++j) c_scale[j] = std::max(1.0, c0.jacobian.row(j).lpNorm<Eigen::Infinity>());

    for (Idx i = 0; i < x.size(); ++i) {
        if (problem.lower[i] == problem.upper[i]) continue;
        double h = 1e-6 * std::max(1.0, std::abs(x[i]));
        // second-order stencil that stays inside the box
        std::vector<std::pair<double, double>> stencil;  // (offset, weight)
        if (x[i] - h >= problem.lower[i] && x[i] + h <= problem.upper[i]) {
            stencil = {{h, 0.5 / h}, {-h, -0.5 / h}};
        } else {
            const double dir = x[i] + 2.0 * h <= problem.upper[i] ? 1.0 : -1.0;
            h = std::min(h, 0.5 * (problem.upper[i] - problem.lower[i]));
            stencil = {{0.0, -1.5 * dir / h}, {dir * h, 2.0 * dir / h}, {2.0 * dir * h, -0.5 * dir / h}};
        }
        double fd = 0.0;
        Vector cfd = Vector::Zero(m);
        for (const auto& [offset, weight] : stencil) {
            Vector xs = x;
            xs[i] += offset;
            fd += weight * (offset == 0.0 ? f0.value : problem.objective(xs).value);
            if (m > 0) cfd += weight * (offset == 0.0 ? c0.values : eval_constraints(problem, xs).values);
        }
        if (!(std::abs(fd - f0.gradient[i]) <= rel_tol * f_scale)) {
            throw NumericError(fmt::format("gradient audit failed: objective d/dx[{}] analytic {:.10g}, finite difference {:.10g}",
                                           i, f0.gradient[i], fd));
        }
        if (m == 0) continue;
        for (Idx j = 0; j < m; ++j) {
            if (!(std::abs(cfd[j] - c0.jacobian(j, i)) <= rel_tol * c_scale[j])) {
                throw NumericError(fmt::format(
                    "gradient audit failed: constraint {} d/dx[{}] analytic {:.10g}, finite difference {:.10g}", j, i,
                    c0.jacobian(j, i), cfd[j]));
            }
        }
    }
}

SolverResult minimize(const NlpProblem& problem, const SolverConfig& config) {
    check_problem(problem);
    const auto m = static_cast<Idx>(problem.n_constraints);
    const Vector& lo = problem.lower;
    const Vector& hi = problem.upper;

    SolverResult res;
    res.x = problem.x0;
    res.multipliers = Vector::Zero(m);
    int outer = 0;

    auto with_context = [&](auto&& fn) {
        try {
            return fn();
        } catch (const std::exception& e) {
            throw NumericError(fmt::format("evaluation failed at outer iteration {} after {} inner iterations: {}",
                                           outer, res.inner_iterations, e.what()));
        }
    };

    auto f0 = with_context([&] { return problem.objective(res.x); });
    auto c0 = with_context([&] { return eval_constraints(problem, res.x); });
    if (!finite(f0) || !c0.values.allFinite() || !c0.jacobian.allFinite()) {
        res.status = SolverStatus::NumericFailure;
        res.objective = f0.value;
        res.max_violation = max_violation(c0.values);
        res.kkt_residual = std::numeric_limits<double>::infinity();
        res.message = "non-finite objective or constraint at the initial point";
        return res;
    }
    if (config.gradient_audit) audit_gradients(problem, res.x, config.audit_tolerance);

    // a constraint sitting exactly on its boundary gives a kinked hinge
    Vector shift = Vector::Zero(m);
    for (Idx j = 0; j < m; ++j)
        if (c0.values[j] == 0.0) shift[j] = kDegenerateShift;
    auto constraints = [&](const Vector& x) {
        auto c = eval_constraints(problem, x);
        c.values += shift;
        return c;
    };

    Vector lambda = Vector::Zero(m);
    double rho = config.initial_penalty;
    double prev_violation = max_violation(c0.values + shift);
    bool decided = false;
    ObjectiveEval f_cur = f0;
    ConstraintEval c_cur = c0;
    c_cur.values += shift;

    for (outer = 1; outer <= config.max_outer_iterations; ++outer) {
        const int remaining = config.max_inner_iterations - res.inner_iterations;
        if (remaining <= 0) break;
        const bool rho_at_cap = rho >= config.max_penalty;
        const double inner_tol = m == 0 ? 0.1 * config.tolerance
                                        : std::max(0.1 * config.tolerance, 1e-2 * std::pow(0.1, outer - 1));

        const ObjectiveFn augmented = [&](const Vector& x) {
            return with_context([&] {
                auto f = problem.objective(x);
                if (m == 0) return f;
                const auto c = constraints(x);
                const Vector shifted = (lambda + rho * c.values).cwiseMax(0.0);
                f.value += (shifted.squaredNorm() - lambda.squaredNorm()) / (2.0 * rho);
                f.gradient.noalias() += c.jacobian.transpose() * shifted;
                return f;
            });
        };
        const auto inner = inner_solve(augmented, lo, hi, res.x, {inner_tol, remaining, config.lbfgs_memory});
        res.inner_iterations += inner.iterations;
        res.x = inner.x;

        f_cur = with_context([&] { return problem.objective(res.x); });
        c_cur = with_context([&] { return constraints(res.x); });
        if (!finite(f_cur) || !c_cur.values.allFinite()) {
            res.status = SolverStatus::NumericFailure;
            res.message = "non-finite values at an accepted iterate";
            decided = true;
            break;
        }
        const double violation = max_violation(c_cur.values);
        if (m > 0)
            lambda = (lambda + rho * c_cur.values).cwiseMax(0.0).cwiseMin(config.max_multiplier);
        res.multipliers = lambda;
        const double kkt = kkt_from_parts(res.x, f_cur.gradient, c_cur, lambda, lo, hi);
        res.trace.push_back({outer, rho, violation, f_cur.value, kkt, inner.iterations});
        log().debug("outer {:2d} rho {:.1e} viol {:.3e} f {:.6e} kkt {:.3e} inner {}", outer, rho, violation,
                    f_cur.value, kkt, inner.iterations);

        if (kkt <= config.tolerance && violation <= kViolationTol) {
            res.status = SolverStatus::Optimal;
            decided = true;
            break;
        }
        if (inner.line_search_failed && inner.non_finite && inner.iterations == 0) {
            res.status = SolverStatus::NumericFailure;
            res.message = "line search met only non-finite values";
            decided = true;
            break;
        }
        const bool multiplier_at_cap = m > 0 && lambda.maxCoeff() >= config.max_multiplier;
        if ((rho_at_cap || multiplier_at_cap) && violation > config.acceptable_tolerance) {
            res.status = SolverStatus::Infeasible;
            res.message = "penalty or multiplier safeguard reached with constraints still violated";
            decided = true;
            break;
        }
        if (m == 0 && inner.iterations == 0) break;  // nothing left to gain
        if (violation > std::max(kViolationTol, 0.25 * prev_violation))
            rho = std::min(rho * config.penalty_growth, config.max_penalty);
        prev_violation = violation;
    }
    res.outer_iterations = static_cast<int>(res.trace.size());
    res.objective = f_cur.value;
    res.max_violation = max_violation(c_cur.values);
    res.kkt_residual = res.trace.empty() ? kkt_from_parts(res.x, f_cur.gradient, c_cur, lambda, lo, hi)
                                         : res.trace.back().kkt_residual;
    if (!decided) {
        if (res.kkt_residual <= config.acceptable_tolerance && res.max_violation <= config.acceptable_tolerance) {
            res.status = SolverStatus::AcceptablyOptimal;
        } else {
            res.status = SolverStatus::IterLimit;
            res.message = "iteration limit reached";
        }
    }
    return res;
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace) {
    out << "outer_iter,penalty,max_violation,objective,kkt_residual,inner_iterations\n";
    for (const auto& r : trace)
        out << fmt::format("{},{},{},{},{},{}\n", r.outer, r.penalty, r.max_violation, r.objective, r.kkt_residual,
                           r.inner_iterations);
}

}  // namespace acpf_adv
