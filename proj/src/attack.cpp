#include "acpf_adv/attack.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <thread>

#include <fmt/format.h>

#include "acpf_adv/errors.hpp"
#include "acpf_adv/log.hpp"

namespace acpf_adv {

namespace {
using Idx = Eigen::Index;

// Objective value handed back when the PF solve fails at a trial point; far
// above any attainable error so the line search backtracks.
constexpr double kFailurePenalty = 1e3;

// JSON has no NaN; failed attempts store null
nlohmann::json num(double d) { return std::isfinite(d) ? nlohmann::json(d) : nlohmann::json(nullptr); }

double get_num(const nlohmann::json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

nlohmann::json to_vec(const Vector& v) {
    auto out = nlohmann::json::array();
    for (double d : v) out.push_back(num(d));
    return out;
}

Vector from_json_vec(const nlohmann::json& j) {
    Vector v(static_cast<Idx>(j.size()));
    for (Idx k = 0; k < v.size(); ++k) v[k] = get_num(j.at(static_cast<std::size_t>(k)));
    return v;
}

bool suspect(const GridCase& grid, const Vector& state) {
    const auto n = static_cast<Idx>(grid.n_bus());
    for (Idx k = 0; k < n; ++k)
        if (std::abs(state[n + k] - 1.0) > kSuspectVoltageDeviation) return true;
    return false;
}

// PF evaluations along an optimization path, warm-started from the last
// converged state and cached on the last point.
class PfTracker {
  public:
    struct Eval {
        bool ok = false;
        PfSolution solution;
        Matrix jacobian;  // dy_PF/dx
    };

    explicit PfTracker(const GridCase& grid) : pf_(grid) {}

    const PowerFlow& pf() const { return pf_; }

    const Eval& evaluate(const Vector& x) {
        if (has_cache_ && x == cache_x_) return cache_;
        const PfInput in{x};
        auto sol = pf_.solve(in, warm_);
        if (!sol.converged && warm_) sol = pf_.solve(in);
        cache_x_ = x;
        has_cache_ = true;
        cache_.ok = sol.converged;
        if (sol.converged) {
            warm_ = sol.state;
            cache_.jacobian = pf_.output_jacobian(sol, in);
        }
        cache_.solution = std::move(sol);
        return cache_;
    }

  private:
    PowerFlow pf_;
    std::optional<Vector> warm_;
    bool has_cache_ = false;
    Vector cache_x_;
    Eval cache_;
};

// Model evaluations cached on the last point.
class NnTracker {
  public:
    explicit NnTracker(const Surrogate& model) : model_(model) {}

    std::pair<const Vector&, const Matrix&> evaluate(const Vector& x) {
        if (!has_cache_ || x != x_) {
            y_ = model_.forward(x);
            jac_ = model_.jacobian(x);
            x_ = x;
            has_cache_ = true;
        }
        return {y_, jac_};
    }

  private:
    const Surrogate& model_;
    bool has_cache_ = false;
    Vector x_, y_;
    Matrix jac_;
};

// Last finite value/gradient of a scalar, reused when a PF solve fails.
struct Fallback {
    double value = 0.0;
    Vector gradient;
};

double sign_of(AttackMode m) { return m == AttackMode::MaxError ? -1.0 : 1.0; }

Vector split_to_x(const AttackSpec& spec, const Vector& v) {
    const auto n = spec.x0.size();
    return (spec.x0 + v.head(n) - v.tail(n)).cwiseMax(spec.lower).cwiseMin(spec.upper);
}

std::string attack_key(const AttackSpec& spec, int bus_id) {
    switch (spec.mode) {
        case AttackMode::MaxError: return fmt::format("max/{:04d}/0max", bus_id);
        case AttackMode::MinError: return fmt::format("max/{:04d}/1min", bus_id);
        case AttackMode::ConstrainedError: return fmt::format("con/{:04d}/{:04d}", spec.point, bus_id);
    }
    return "?";
}

double l1_distance(const Vector& x, const Vector& x0) { return (x - x0).lpNorm<1>(); }

int l0_count(const Vector& x, const Vector& x0) {
    return static_cast<int>(((x - x0).array().abs() > kL0Threshold).count());
}

struct Stats {
    double mean = 0.0, std = 0.0, max = 0.0, min = 0.0;
};

Stats stats(const std::vector<double>& v) {
    Stats s;
    if (v.empty()) return s;
    double total = 0.0;
    for (double d : v) total += d;
    s.mean = total / static_cast<double>(v.size());
    double sq = 0.0;
    for (double d : v) sq += (d - s.mean) * (d - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(v.size()));
    s.max = *std::max_element(v.begin(), v.end());
    s.min = *std::min_element(v.begin(), v.end());
    return s;
}

LossTableRow make_row(const std::string& label, const std::vector<double>& mse, const std::vector<double>& pbl) {
    const auto m = stats(mse);
    const auto p = stats(pbl);
    return {label, mse.size(), m.mean, m.std, m.max, p.mean, p.std, p.max, p.min};
}

}  // namespace

std::string_view to_string(AttackMode m) {
    switch (m) {
        case AttackMode::MaxError: return "max_error";
        case AttackMode::MinError: return "min_error";
        case AttackMode::ConstrainedError: return "constrained_error";
    }
    return "?";
}

AttackMode attack_mode_from_string(std::string_view text) {
    for (auto m : {AttackMode::MaxError, AttackMode::MinError, AttackMode::ConstrainedError})
        if (to_string(m) == text) return m;
    throw ConfigError("unknown attack mode '" + std::string(text) + "'");
}

AttackSpec AttackSpec::max_error(const GridCase& grid, int bus_id, Quantity q, AttackMode mode) {
    if (mode == AttackMode::ConstrainedError) throw ConfigError("max_error spec needs MaxError or MinError");
    const PfLayout layout(grid);
    const auto bounds = input_bounds(grid);
    AttackSpec s;
    s.target = layout.output_index(bus_id, q);
    s.mode = mode;
    s.lower = bounds.lower;
    s.upper = bounds.upper;
    s.x0 = bounds.project(nominal_input(grid).flat);
    return s;
}

AttackSpec AttackSpec::constrained(const GridCase& grid, int bus_id, const Vector& x0, double lower_bound,
                                   double delta, int point) {
    const PfLayout layout(grid);
    const auto bounds = input_bounds(grid);
    if (x0.size() != static_cast<Idx>(layout.n_in())) throw DimensionError("reference point has the wrong size");
    AttackSpec s;
    s.target = layout.output_index(bus_id, Quantity::v_mag);
    s.mode = AttackMode::ConstrainedError;
    s.lower_bound = lower_bound;
    s.delta = delta;
    s.x0 = x0;
    s.point = point;
    s.lower = bounds.lower;
    s.upper = bounds.upper;
    // loads and REF quantities stay at the reference point
    for (std::size_t i = 0; i < layout.n_in(); ++i) {
        if (layout.inputs()[i].kind != BusKind::PV) {
            s.lower[static_cast<Idx>(i)] = x0[static_cast<Idx>(i)];
            s.upper[static_cast<Idx>(i)] = x0[static_cast<Idx>(i)];
        }
    }
    return s;
}

void validate(const AttackSpec& spec, const PfLayout& layout) {
    const auto n = static_cast<Idx>(layout.n_in());
    if (spec.target >= layout.n_out())
        throw ValidationError(fmt::format("target {} outside the {} outputs", spec.target, layout.n_out()));
    if (spec.x0.size() != n || spec.lower.size() != n || spec.upper.size() != n)
        throw DimensionError("attack spec vectors do not match the input layout");
    for (Idx i = 0; i < n; ++i) {
        if (!(spec.lower[i] <= spec.upper[i]))
            throw ValidationError("attack bounds inverted at " + layout.inputs()[static_cast<std::size_t>(i)].name());
        if (!(spec.x0[i] >= spec.lower[i] && spec.x0[i] <= spec.upper[i]))
            throw ValidationError("attack start point outside bounds at " +
                                  layout.inputs()[static_cast<std::size_t>(i)].name());
    }
    if (spec.mode == AttackMode::ConstrainedError && !(spec.delta > 0.0))
        throw ValidationError("constrained attack needs delta > 0");
}

nlohmann::json to_json(const AttackResult& r) {
    return {{"key", r.key},
            {"mode", to_string(r.mode)},
            {"target", r.target},
            {"target_name", r.target_name},
            {"bus_id", r.bus_id},
            {"point", r.point},
            {"lower_bound", r.lower_bound},
            {"delta", r.delta},
            {"x", to_vec(r.x)},
            {"x0", to_vec(r.x0)},
            {"y_nn", to_vec(r.y_nn)},
            {"y_pf", to_vec(r.y_pf)},
            {"objective", num(r.objective)},
            {"error", num(r.error)},
            {"l1_norm", num(r.l1_norm)},
            {"l0_count", r.l0_count},
            {"pf_residual", num(r.pf_residual)},
            {"pf_converged", r.pf_converged},
            {"status", to_string(r.status)},
            {"outer_iterations", r.outer_iterations},
            {"inner_iterations", r.inner_iterations},
            {"max_violation", num(r.max_violation)},
            {"kkt_residual", num(r.kkt_residual)},
            {"suspect_branch", r.suspect_branch},
            {"message", r.message}};
}

AttackResult attack_result_from_json(const nlohmann::json& j) {
    AttackResult r;
    r.key = j.at("key").get<std::string>();
    r.mode = attack_mode_from_string(j.at("mode").get<std::string>());
    r.target = j.at("target").get<std::size_t>();
    r.target_name = j.at("target_name").get<std::string>();
    r.bus_id = j.at("bus_id").get<int>();
    r.point = j.at("point").get<int>();
    r.lower_bound = j.at("lower_bound").get<double>();
    r.delta = j.at("delta").get<double>();
    r.x = from_json_vec(j.at("x"));
    r.x0 = from_json_vec(j.at("x0"));
    r.y_nn = from_json_vec(j.at("y_nn"));
    r.y_pf = from_json_vec(j.at("y_pf"));
    r.objective = get_num(j.at("objective"));
    r.error = get_num(j.at("error"));
    r.l1_norm = get_num(j.at("l1_norm"));
    r.l0_count = j.at("l0_count").get<int>();
    r.pf_residual = get_num(j.at("pf_residual"));
    r.pf_converged = j.at("pf_converged").get<bool>();
    r.status = solver_status_from_string(j.at("status").get<std::string>());
    r.outer_iterations = j.at("outer_iterations").get<int>();
    r.inner_iterations = j.at("inner_iterations").get<int>();
    r.max_violation = get_num(j.at("max_violation"));
    r.kkt_residual = get_num(j.at("kkt_residual"));
    r.suspect_branch = j.at("suspect_branch").get<bool>();
    r.message = j.value("message", "");
    return r;
}

namespace {

NlpProblem max_error_problem(const GridCase& grid, const Surrogate& model, const AttackSpec& spec,
                             const std::shared_ptr<PfTracker>& pf) {
    if (spec.mode == AttackMode::ConstrainedError) throw ConfigError("build_max_error needs MaxError or MinError");
    const PfLayout layout(grid);
    validate(spec, layout);
    if (model.input_dim() != layout.n_in() || model.output_dim() != layout.n_out())
        throw DimensionError("model dimensions do not match the case layout");

    auto nn = std::make_shared<NnTracker>(model);
    auto fallback = std::make_shared<Fallback>();
    const auto i = static_cast<Idx>(spec.target);
    const double sign = sign_of(spec.mode);

    NlpProblem p;
    p.lower = spec.lower;
    p.upper = spec.upper;
    p.x0 = spec.x0;
    p.objective = [pf, nn, fallback, i, sign](const Vector& x) {
        const auto& e = pf->evaluate(x);
        if (!e.ok) {
            if (fallback->gradient.size() == 0)
                throw NumericError("power flow does not converge at the initial point: " + e.solution.diagnostic);
            return ObjectiveEval{std::abs(fallback->value) + kFailurePenalty, fallback->gradient};
        }
        const auto [y, jac] = nn->evaluate(x);
        ObjectiveEval out{sign * (y[i] - e.solution.output.flat[i]), sign * (jac.row(i) - e.jacobian.row(i)).transpose()};
        fallback->value = out.value;
        fallback->gradient = out.gradient;
        return out;
    };
    return p;
}

NlpProblem constrained_problem(const GridCase& grid, const Surrogate& model, const AttackSpec& spec,
                               const std::shared_ptr<PfTracker>& pf) {
    if (spec.mode != AttackMode::ConstrainedError) throw ConfigError("build_constrained_error needs ConstrainedError");
    const PfLayout layout(grid);
    validate(spec, layout);
    if (model.input_dim() != layout.n_in() || model.output_dim() != layout.n_out())
        throw DimensionError("model dimensions do not match the case layout");

    const auto n = spec.x0.size();
    auto nn = std::make_shared<NnTracker>(model);
    auto fallback = std::make_shared<Fallback>();
    const auto i = static_cast<Idx>(spec.target);

    NlpProblem p;
    p.lower = Vector::Zero(2 * n);
    p.upper.resize(2 * n);
    p.upper.head(n) = spec.upper - spec.x0;
    p.upper.tail(n) = spec.x0 - spec.lower;
    p.x0 = Vector::Zero(2 * n);
    p.objective = [n](const Vector& v) { return ObjectiveEval{v.sum(), Vector::Ones(2 * n)}; };
    p.n_constraints = 2;
    p.constraints = [spec, pf, nn, fallback, i, n](const Vector& v) {
        const Vector x = split_to_x(spec, v);
        const auto& e = pf->evaluate(x);
        const auto [y, jac] = nn->evaluate(x);
        ConstraintEval c{Vector(2), Matrix(2, 2 * n)};
        c.values[0] = spec.lower_bound - y[i];
        c.jacobian.block(0, 0, 1, n) = -jac.row(i);
        c.jacobian.block(0, n, 1, n) = jac.row(i);
        if (e.ok) {
            c.values[1] = e.solution.output.flat[i] - spec.lower_bound + spec.delta;
            c.jacobian.block(1, 0, 1, n) = e.jacobian.row(i);
            c.jacobian.block(1, n, 1, n) = -e.jacobian.row(i);
            fallback->value = c.values[1];
            fallback->gradient = c.jacobian.row(1).transpose();
        } else {
            if (fallback->gradient.size() == 0)
                throw NumericError("power flow does not converge at the reference point: " + e.solution.diagnostic);
            c.values[1] = std::abs(fallback->value) + kFailurePenalty;
            c.jacobian.row(1) = fallback->gradient.transpose();
        }
        return c;
    };
    return p;
}

}  // namespace

NlpProblem build_max_error(const GridCase& grid, const Surrogate& model, const AttackSpec& spec) {
    return max_error_problem(grid, model, spec, std::make_shared<PfTracker>(grid));
}

NlpProblem build_constrained_error(const GridCase& grid, const Surrogate& model, const AttackSpec& spec) {
    return constrained_problem(grid, model, spec, std::make_shared<PfTracker>(grid));
}

AttackResult run_attack(const GridCase& grid, const Surrogate& model, const AttackSpec& spec,
                        const SolverConfig& solver) {
    const auto start = std::chrono::steady_clock::now();
    const PfLayout layout(grid);
    AttackResult r;
    r.mode = spec.mode;
    r.target = spec.target;
    r.target_name = spec.target < layout.n_out() ? layout.outputs()[spec.target].name() : "?";
    r.bus_id = spec.target < layout.n_out() ? layout.outputs()[spec.target].bus_id : 0;
    r.key = attack_key(spec, r.bus_id);
    r.point = spec.point;
    r.x0 = spec.x0;
    if (spec.mode == AttackMode::ConstrainedError) {
        r.lower_bound = spec.lower_bound;
        r.delta = spec.delta;
    }

    const bool constrained = spec.mode == AttackMode::ConstrainedError;
    auto tracker = std::make_shared<PfTracker>(grid);
    const auto problem = constrained ? constrained_problem(grid, model, spec, tracker)
                                     : max_error_problem(grid, model, spec, tracker);
    const auto sol = minimize(problem, solver);
    r.status = sol.status;
    r.outer_iterations = sol.outer_iterations;
    r.inner_iterations = sol.inner_iterations;
    r.max_violation = sol.max_violation;
    r.kkt_residual = sol.kkt_residual;
    r.message = sol.message;
    r.x = constrained ? split_to_x(spec, sol.x) : Vector(sol.x);

    // PF at x* on the optimizer's own branch (warm-started along its path);
    // the verifier re-solves from flat start
    const auto& fin = tracker->evaluate(r.x);
    r.y_nn = model.forward(r.x);
    r.pf_converged = fin.ok;
    r.pf_residual = fin.solution.residual_norm;
    if (fin.ok) {
        r.y_pf = fin.solution.output.flat;
        r.suspect_branch = suspect(grid, fin.solution.state);
        const auto i = static_cast<Idx>(spec.target);
        r.error = r.y_nn[i] - r.y_pf[i];
    } else {
        r.y_pf = Vector::Constant(static_cast<Idx>(layout.n_out()), std::nan(""));
        r.error = std::nan("");
        r.message = "power flow does not converge at the final point";
        r.status = SolverStatus::NumericFailure;
    }
    r.l1_norm = l1_distance(r.x, spec.x0);
    r.l0_count = l0_count(r.x, spec.x0);
    r.objective = constrained ? sol.objective : r.error;
    r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

Verification verify_result(const GridCase& grid, const Surrogate& model, const AttackResult& result, double tol) {
    Verification v;
    const PowerFlow pf(grid);
    const auto& layout = pf.layout();
    auto issue = [&](std::string text) {
        v.consistent = false;
        v.issues.push_back(std::move(text));
    };
    const auto n = static_cast<Idx>(layout.n_in());
    if (result.x.size() != n || result.x0.size() != n || result.target >= layout.n_out()) {
        issue("result dimensions do not match the case");
        return v;
    }
    const auto i = static_cast<Idx>(result.target);
    if (layout.outputs()[result.target].name() != result.target_name) issue("target name does not match the index");

    // bounds rebuilt from the case, not from the result
    const auto spec = result.mode == AttackMode::ConstrainedError
                          ? AttackSpec::constrained(grid, result.bus_id, result.x0, result.lower_bound, result.delta)
                          : AttackSpec::max_error(grid, result.bus_id, layout.outputs()[result.target].quantity,
                                                  result.mode);
    for (Idx k = 0; k < n; ++k) {
        const auto& name = layout.inputs()[static_cast<std::size_t>(k)].name();
        if (result.x[k] < spec.lower[k] || result.x[k] > spec.upper[k]) issue("x outside bounds at " + name);
        if (spec.lower[k] == spec.upper[k] && result.x[k] != spec.lower[k]) issue("fixed coordinate moved: " + name);
    }
    if (l0_count(result.x, result.x0) != result.l0_count) issue("l0 count does not match x - x0");
    if (std::abs(l1_distance(result.x, result.x0) - result.l1_norm) > 1e-8) issue("l1 norm does not match x - x0");

    if (!result.pf_converged) return v;  // reported as a failure; nothing to compare
    if (std::abs((result.y_nn[i] - result.y_pf[i]) - result.error) > 1e-8)
        issue("reported error differs from y_nn - y_pf");
    if (result.mode != AttackMode::ConstrainedError && result.objective != result.error)
        issue("objective differs from the signed error");

    const Vector y_nn = model.forward(result.x);
    const auto sol = pf.solve(PfInput{result.x});
    if (!sol.converged) {
        issue("power flow from flat start does not converge: " + sol.diagnostic);
        return v;
    }
    v.y_nn = y_nn[i];
    v.y_pf = sol.output.flat[i];
    v.error = v.y_nn - v.y_pf;
    v.suspect_branch = suspect(grid, sol.state);
    if (std::abs(v.y_nn - result.y_nn[i]) > tol) issue(fmt::format("y_nn differs by {:.3e}", v.y_nn - result.y_nn[i]));
    if (std::abs(v.y_pf - result.y_pf[i]) > tol)
        issue(fmt::format("y_pf differs by {:.3e} (power flow branch changed)", v.y_pf - result.y_pf[i]));
    if (std::abs(v.error - result.error) > tol) issue(fmt::format("error differs by {:.3e}", v.error - result.error));
    if (result.mode == AttackMode::ConstrainedError && result.converged()) {
        if (v.y_nn < result.lower_bound - tol) issue(fmt::format("y_nn {:.6f} below the lower bound", v.y_nn));
        if (v.y_pf > result.lower_bound - result.delta + tol)
            issue(fmt::format("y_pf {:.6f} above the bound minus margin", v.y_pf));
    }
    return v;
}

nlohmann::json to_json(const CampaignOptions& c) {
    return {{"solver", to_json(c.solver)}, {"workers", c.workers}, {"lower_bound", c.lower_bound}, {"delta", c.delta}};
}

CampaignOptions campaign_options_from_json(const nlohmann::json& j) {
    CampaignOptions c;
    if (j.contains("solver")) c.solver = solver_config_from_json(j.at("solver"));
    c.workers = j.value("workers", c.workers);
    c.lower_bound = j.value("lower_bound", c.lower_bound);
    c.delta = j.value("delta", c.delta);
    if (c.workers < 1) throw ConfigError("workers must be >= 1");
    if (!(c.delta > 0.0)) throw ConfigError("delta must be positive");
    return c;
}

std::vector<AttackResult> run_attacks(const GridCase& grid, const Surrogate& model,
                                      const std::vector<AttackSpec>& specs, const CampaignOptions& options) {
    std::vector<AttackResult> out(specs.size());
    const PfLayout layout(grid);
    auto run_one = [&](std::size_t k) {
        const auto& spec = specs[k];
        try {
            out[k] = run_attack(grid, model, spec, options.solver);
        } catch (const std::exception& e) {
            // keep the campaign going; the attempt is recorded as failed
            AttackResult r;
            r.mode = spec.mode;
            r.target = spec.target;
            if (spec.target < layout.n_out()) {
                r.target_name = layout.outputs()[spec.target].name();
                r.bus_id = layout.outputs()[spec.target].bus_id;
            }
            r.key = attack_key(spec, r.bus_id);
            r.point = spec.point;
            r.lower_bound = spec.lower_bound;
            r.delta = spec.delta;
            r.x = spec.x0;
            r.x0 = spec.x0;
            r.y_nn = Vector::Constant(static_cast<Idx>(layout.n_out()), std::nan(""));
            r.y_pf = r.y_nn;
            r.error = std::nan("");
            r.objective = std::nan("");
            r.status = SolverStatus::NumericFailure;
            r.message = e.what();
            out[k] = std::move(r);
        }
        log().info("{} {} {}: {} error {:.4g}", out[k].key, to_string(spec.mode), out[k].target_name,
                   to_string(out[k].status), out[k].error);
    };

    const auto workers = static_cast<std::size_t>(std::max(1, options.workers));
    if (workers == 1 || specs.size() < 2) {
        for (std::size_t k = 0; k < specs.size(); ++k) run_one(k);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < std::min(workers, specs.size()); ++w) {
            pool.emplace_back([&] {
                for (std::size_t k = next++; k < specs.size(); k = next++) run_one(k);
            });
        }
        for (auto& t : pool) t.join();
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.key < b.key; });
    return out;
}

std::vector<AttackSpec> max_error_specs(const GridCase& grid) {
    std::vector<AttackSpec> specs;
    for (const auto& bus : grid.buses) {
        const auto q = bus.kind == BusKind::PQ ? Quantity::v_mag : Quantity::q_inj;
        specs.push_back(AttackSpec::max_error(grid, bus.id, q, AttackMode::MaxError));
        specs.push_back(AttackSpec::max_error(grid, bus.id, q, AttackMode::MinError));
    }
    return specs;
}

std::vector<AttackResult> run_max_error_campaign(const GridCase& grid, const Surrogate& model,
                                                 const CampaignOptions& options) {
    return run_attacks(grid, model, max_error_specs(grid), options);
}

std::vector<int> pq_bus_ids(const GridCase& grid) {
    std::vector<int> ids;
    for (const auto& bus : grid.buses)
        if (bus.kind == BusKind::PQ) ids.push_back(bus.id);
    return ids;
}

std::vector<AttackSpec> constrained_specs(const GridCase& grid, const std::vector<TrainingPoint>& points,
                                          const std::vector<int>& buses, double lower_bound, double delta) {
    std::vector<AttackSpec> specs;
    for (const auto& p : points)
        for (int bus : buses) specs.push_back(AttackSpec::constrained(grid, bus, p.x, lower_bound, delta, p.index));
    return specs;
}

std::vector<AttackResult> run_constrained_campaign(const GridCase& grid, const Surrogate& model,
                                                   const std::vector<TrainingPoint>& points,
                                                   const std::vector<int>& buses, const CampaignOptions& options) {
    return run_attacks(grid, model, constrained_specs(grid, points, buses, options.lower_bound, options.delta),
                       options);
}

LossTableRow evaluate_adversarial_set(const GridCase& grid, const Surrogate& model, const std::vector<Vector>& points,
                                      const std::string& label) {
    if (points.empty()) throw ConfigError("no points to evaluate");
    const PowerFlow pf(grid);
    std::vector<TrainingSample> samples;
    for (const auto& x : points) {
        const auto sol = pf.solve(PfInput{x});
        if (!sol.converged) throw NumericError("power flow does not converge at an evaluated point: " + sol.diagnostic);
        samples.push_back({x, sol.output.flat, sol.residual_norm});
    }
    return evaluate_samples(grid, model, samples, label);
}

LossTableRow evaluate_samples(const GridCase& grid, const Surrogate& model, std::span<const TrainingSample> samples,
                              const std::string& label) {
    if (samples.empty()) throw ConfigError("no points to evaluate");
    const PowerFlow pf(grid);
    const Vector scale = model.output_scale();
    std::vector<double> mse, pbl;
    for (const auto& s : samples) {
        const Vector y = model.forward(s.x);
        mse.push_back(sample_mse(y, s.y, scale));
        pbl.push_back(loss_pbl(pf, s.x, y));
    }
    return make_row(label, mse, pbl);
}

void save_results(const std::vector<AttackResult>& results, const std::filesystem::path& path,
                  const nlohmann::json& provenance) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    nlohmann::json wall = nlohmann::json::object();
    for (const auto& r : results) wall[r.key] = r.wall_time;
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    out << nlohmann::json{{"provenance", provenance},
                          {"run_info",
                           {{"timestamp", std::chrono::duration_cast<std::chrono::seconds>(now).count()},
                            {"wall_time", wall}}}}
               .dump()
        << '\n';
    for (const auto& r : results) out << to_json(r).dump() << '\n';
}

ResultsFile load_results(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open results " + path.string());
    ResultsFile file;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            if (j.contains("provenance")) {
                file.provenance = j.at("provenance");
                file.run_info = j.value("run_info", nlohmann::json::object());
                continue;
            }
            file.results.push_back(attack_result_from_json(j));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, std::string("results: ") + e.what());
        }
    }
    for (auto& r : file.results)
        if (file.run_info.contains("wall_time") && file.run_info["wall_time"].contains(r.key))
            r.wall_time = file.run_info["wall_time"][r.key].get<double>();
    return file;
}

}  // namespace acpf_adv
