#include "acpf_adv/pf_core.hpp"

#include <cmath>
#include <complex>
#include <limits>

#include "acpf_adv/log.hpp"

namespace acpf_adv {

namespace {
constexpr std::size_t npos = static_cast<std::size_t>(-1);
using Complex = std::complex<double>;
using Idx = Eigen::Index;

Idx ix(std::size_t i) { return static_cast<Idx>(i); }
}  // namespace

PowerFlow::PowerFlow(const GridCase& grid)
    : grid_(grid), layout_(grid), n_(grid.n_bus()), ref_(grid.ref_index()) {
    require_valid(grid_);
    g_ = Matrix::Zero(ix(n_), ix(n_));
    b_ = Matrix::Zero(ix(n_), ix(n_));
    for (std::size_t k = 0; k < n_; ++k) {
        g_(ix(k), ix(k)) += grid_.buses[k].gs;
        b_(ix(k), ix(k)) += grid_.buses[k].bs;
    }
    for (const auto& br : grid_.branches) {
        if (!br.status) continue;
        const auto f = ix(grid_.bus_index(br.from_bus));
        const auto t = ix(grid_.bus_index(br.to_bus));
        const Complex ys = 1.0 / Complex(br.r, br.x);
        const Complex tap = std::polar(br.tap, br.shift);
        const Complex ytt = ys + Complex(0.0, br.b_charging / 2.0);
        const Complex yff = ytt / std::norm(tap);
        const Complex yft = -ys / std::conj(tap);
        const Complex ytf = -ys / tap;
        g_(f, f) += yff.real(), b_(f, f) += yff.imag();
        g_(t, t) += ytt.real(), b_(t, t) += ytt.imag();
        g_(f, t) += yft.real(), b_(f, t) += yft.imag();
        g_(t, f) += ytf.real(), b_(t, f) += ytf.imag();
    }

    ang_input_.assign(n_, npos);
    mag_input_.assign(n_, npos);
    for (std::size_t i = 0; i < layout_.n_in(); ++i) {
        const auto& c = layout_.inputs()[i];
        if (c.quantity == Quantity::v_ang) ang_input_[c.bus] = i;
        if (c.quantity == Quantity::v_mag) mag_input_[c.bus] = i;
    }
    for (std::size_t k = 0; k < n_; ++k)
        if (grid_.buses[k].kind != BusKind::REF) p_rows_.push_back(k);
    for (std::size_t k = 0; k < n_; ++k)
        if (grid_.buses[k].kind == BusKind::PQ) q_rows_.push_back(k);
    for (auto k : p_rows_) p_spec_.push_back(layout_.input_index(grid_.buses[k].id, Quantity::p_inj));
    for (auto k : q_rows_) q_spec_.push_back(layout_.input_index(grid_.buses[k].id, Quantity::q_inj));
    for (auto k : p_rows_) unknowns_.push_back(k);
    for (auto k : q_rows_) unknowns_.push_back(n_ + k);
}

void PowerFlow::check_dims(const Vector& state, const PfInput& x) const {
    if (static_cast<std::size_t>(state.size()) != 2 * n_)
        throw DimensionError("state has " + std::to_string(state.size()) + " entries, expected " +
                             std::to_string(2 * n_));
    if (static_cast<std::size_t>(x.flat.size()) != layout_.n_in())
        throw DimensionError("input has " + std::to_string(x.flat.size()) + " entries, expected " +
                             std::to_string(layout_.n_in()));
}

Vector PowerFlow::effective(const Vector& state, const PfInput& x) const {
    Vector eff = state;
    for (std::size_t k = 0; k < n_; ++k) {
        if (ang_input_[k] != npos) eff[ix(k)] = x.flat[ix(ang_input_[k])];
        if (mag_input_[k] != npos) eff[ix(n_ + k)] = x.flat[ix(mag_input_[k])];
    }
    return eff;
}

Vector PowerFlow::flat_start(const PfInput& x) const {
    Vector s(ix(2 * n_));
    s.head(ix(n_)).setZero();
    s.tail(ix(n_)).setOnes();
    return effective(s, x);
}

PowerFlow::PowerDerivatives PowerFlow::power_derivatives(const Vector& eff) const {
    const auto n = ix(n_);
    const auto th = eff.head(n);
    const auto v = eff.tail(n);
    PowerDerivatives d{Vector::Zero(n), Vector::Zero(n), Matrix::Zero(n, n), Matrix::Zero(n, n),
                       Matrix::Zero(n, n), Matrix::Zero(n, n)};
    for (Idx k = 0; k < n; ++k) {
        for (Idx j = 0; j < n; ++j) {
            const double gkj = g_(k, j);
            const double bkj = b_(k, j);
            if (gkj == 0.0 && bkj == 0.0) continue;
            const double a = th[k] - th[j];
            const double c = std::cos(a);
            const double s = std::sin(a);
            const double gc_bs = gkj * c + bkj * s;
            const double gs_bc = gkj * s - bkj * c;
            d.p[k] += v[k] * v[j] * gc_bs;
            d.q[k] += v[k] * v[j] * gs_bc;
            if (j != k) {
                d.dp_dth(k, j) = v[k] * v[j] * gs_bc;
                d.dq_dth(k, j) = -v[k] * v[j] * gc_bs;
                d.dp_dv(k, j) = v[k] * gc_bs;
                d.dq_dv(k, j) = v[k] * gs_bc;
            }
        }
    }
    for (Idx k = 0; k < n; ++k) {
        d.dp_dth(k, k) = -d.q[k] - b_(k, k) * v[k] * v[k];
        d.dq_dth(k, k) = d.p[k] - g_(k, k) * v[k] * v[k];
        d.dp_dv(k, k) = d.p[k] / v[k] + g_(k, k) * v[k];
        d.dq_dv(k, k) = d.q[k] / v[k] - b_(k, k) * v[k];
    }
    return d;
}

std::pair<Vector, Vector> PowerFlow::injections(const Vector& state, const PfInput& x) const {
    check_dims(state, x);
    auto d = power_derivatives(effective(state, x));
    return {std::move(d.p), std::move(d.q)};
}

Vector PowerFlow::mismatch(const Vector& state, const PfInput& x) const {
    check_dims(state, x);
    const auto d = power_derivatives(effective(state, x));
    Vector r(ix(n_residual()));
    Idx row = 0;
    for (std::size_t i = 0; i < p_rows_.size(); ++i) r[row++] = d.p[ix(p_rows_[i])] - x.flat[ix(p_spec_[i])];
    for (std::size_t i = 0; i < q_rows_.size(); ++i) r[row++] = d.q[ix(q_rows_[i])] - x.flat[ix(q_spec_[i])];
    return r;
}

Matrix PowerFlow::jacobian_state(const Vector& state, const PfInput& x) const {
    check_dims(state, x);
    const auto d = power_derivatives(effective(state, x));
    Matrix jac = Matrix::Zero(ix(n_residual()), ix(2 * n_));
    Idx row = 0;
    auto fill = [&](const Matrix& dth, const Matrix& dv, std::size_t k) {
        for (auto col : unknowns_) {
            jac(row, ix(col)) = col < n_ ? dth(ix(k), ix(col)) : dv(ix(k), ix(col - n_));
        }
        ++row;
    };
    for (auto k : p_rows_) fill(d.dp_dth, d.dp_dv, k);
    for (auto k : q_rows_) fill(d.dq_dth, d.dq_dv, k);
    return jac;
}

Matrix PowerFlow::jacobian_input(const Vector& state, const PfInput& x) const {
    check_dims(state, x);
    const auto d = power_derivatives(effective(state, x));
    Matrix jac = Matrix::Zero(ix(n_residual()), ix(layout_.n_in()));
    Idx row = 0;
    auto fill = [&](const Matrix& dth, const Matrix& dv, std::size_t k, Quantity spec) {
        for (std::size_t i = 0; i < layout_.n_in(); ++i) {
            const auto& c = layout_.inputs()[i];
            if (c.quantity == Quantity::v_ang) jac(row, ix(i)) = dth(ix(k), ix(c.bus));
            if (c.quantity == Quantity::v_mag) jac(row, ix(i)) = dv(ix(k), ix(c.bus));
            if (c.bus == k && c.quantity == spec) jac(row, ix(i)) = -1.0;
        }
        ++row;
    };
    for (auto k : p_rows_) fill(d.dp_dth, d.dp_dv, k, Quantity::p_inj);
    for (auto k : q_rows_) fill(d.dq_dth, d.dq_dv, k, Quantity::q_inj);
    return jac;
}

std::string PowerFlow::residual_row_name(std::size_t row) const {
    if (row < p_rows_.size()) return "P@" + std::to_string(grid_.buses[p_rows_[row]].id);
    return "Q@" + std::to_string(grid_.buses[q_rows_[row - p_rows_.size()]].id);
}

std::vector<std::string> PowerFlow::singular_rows(const Vector& state, const PfInput& x) const {
    const Matrix jac = jacobian_state(state, x);
    std::vector<std::string> out;
    for (Idx r = 0; r < jac.rows(); ++r)
        if (jac.row(r).cwiseAbs().maxCoeff() == 0.0) out.push_back(residual_row_name(static_cast<std::size_t>(r)));
    return out;
}

PfOutput PowerFlow::extract_output(const Vector& state, const PfInput& x) const {
    const Vector eff = effective(state, x);
    const auto d = power_derivatives(eff);
    PfOutput y{Vector::Zero(ix(layout_.n_out()))};
    for (std::size_t i = 0; i < layout_.n_out(); ++i) {
        const auto& c = layout_.outputs()[i];
        double value = 0.0;
        switch (c.quantity) {
            case Quantity::p_inj: value = d.p[ix(c.bus)]; break;
            case Quantity::q_inj: value = d.q[ix(c.bus)]; break;
            case Quantity::v_ang: value = eff[ix(c.bus)]; break;
            case Quantity::v_mag: value = eff[ix(n_ + c.bus)]; break;
        }
        y.flat[ix(i)] = value;
    }
    return y;
}

PfSolution PowerFlow::solve(const PfInput& x, const std::optional<Vector>& init, const NewtonOptions& options) const {
    if (static_cast<std::size_t>(x.flat.size()) != layout_.n_in())
        throw DimensionError("input has " + std::to_string(x.flat.size()) + " entries, expected " +
                             std::to_string(layout_.n_in()));
    for (std::size_t k = 0; k < n_; ++k) {
        if (mag_input_[k] != npos && !(x.flat[ix(mag_input_[k])] > 0.0))
            throw ValidationError("non-positive voltage magnitude input at bus " + std::to_string(grid_.buses[k].id));
    }

    if (init && static_cast<std::size_t>(init->size()) != 2 * n_) throw DimensionError("initial state has wrong size");
    PfSolution sol;
    sol.state = effective(init ? *init : flat_start(x), x);

    Vector r = mismatch(sol.state, x);
    double norm = r.size() ? r.cwiseAbs().maxCoeff() : 0.0;
    Vector best = sol.state;
    double best_norm = norm;

    auto newton_step = [&](const Vector& state, const Vector& res, Vector& step) -> bool {
        const Matrix full = jacobian_state(state, x);
        Matrix jr(full.rows(), ix(unknowns_.size()));
        for (std::size_t c = 0; c < unknowns_.size(); ++c) jr.col(ix(c)) = full.col(ix(unknowns_[c]));
        if (jr.rows() > 0 && (jr.cwiseAbs().rowwise().maxCoeff().array() == 0.0).any()) return false;
        Eigen::PartialPivLU<Matrix> lu(jr);
        if (!(lu.rcond() > 1e-14)) return false;
        step = -lu.solve(res);
        return step.allFinite();
    };

    while (true) {
        if (!std::isfinite(norm)) {
            sol.diagnostic = "non-finite mismatch at iteration " + std::to_string(sol.iterations);
            break;
        }
        if (norm <= options.tol) {
            sol.converged = true;
            // One polishing step: the tail is quadratic, so this usually lands
            // on round-off, which keeps finite-difference audits of PF(x) clean.
            Vector step;
            if (norm > 1e-13 && newton_step(sol.state, r, step)) {
                Vector trial = sol.state;
                for (std::size_t c = 0; c < unknowns_.size(); ++c) trial[ix(unknowns_[c])] += step[ix(c)];
                const Vector r2 = mismatch(trial, x);
                const double n2 = r2.cwiseAbs().maxCoeff();
                if (n2 < norm) {
                    sol.state = trial;
                    r = r2;
                    norm = n2;
                }
            }
            break;
        }
        if (sol.iterations >= options.max_iter) {
            sol.diagnostic = "no convergence in " + std::to_string(options.max_iter) + " iterations";
            break;
        }
        Vector step;
        if (!newton_step(sol.state, r, step)) {
            auto rows = singular_rows(sol.state, x);
            sol.diagnostic = "singular Jacobian";
            if (!rows.empty()) {
                sol.diagnostic += "; structurally singular rows:";
                for (const auto& name : rows) sol.diagnostic += " " + name;
            }
            break;
        }
        ++sol.iterations;
        // Full Newton step unless it blows the mismatch up; then halve.
        double alpha = 1.0;
        Vector trial;
        Vector r_trial;
        double n_trial = 0.0;
        for (int halving = 0;; ++halving) {
            trial = sol.state;
            for (std::size_t c = 0; c < unknowns_.size(); ++c) trial[ix(unknowns_[c])] += alpha * step[ix(c)];
            r_trial = mismatch(trial, x);
            n_trial = r_trial.cwiseAbs().maxCoeff();
            if ((std::isfinite(n_trial) && n_trial < 10.0 * norm) || halving >= 6) break;
            alpha *= 0.5;
        }
        sol.state = trial;
        r = r_trial;
        norm = n_trial;
        if (std::isfinite(norm) && norm < best_norm) {
            best_norm = norm;
            best = sol.state;
        }
    }

    if (!sol.converged && std::isfinite(best_norm)) {
        sol.state = best;
        norm = best_norm;
    }
    sol.residual_norm = norm;
    sol.output = extract_output(sol.state, x);
    if (!sol.converged) log().debug("power flow did not converge: {} (residual {:.3e})", sol.diagnostic, norm);
    return sol;
}

Matrix PowerFlow::output_jacobian(const PfSolution& solution, const PfInput& x) const {
    if (!solution.converged) throw NumericError("output Jacobian requested at a non-converged power flow solution");
    const Vector& state = solution.state;
    const Matrix js_full = jacobian_state(state, x);
    const Matrix jx = jacobian_input(state, x);
    const auto m = ix(unknowns_.size());
    Matrix js(js_full.rows(), m);
    for (Idx c = 0; c < m; ++c) js.col(c) = js_full.col(ix(unknowns_[static_cast<std::size_t>(c)]));
    Eigen::PartialPivLU<Matrix> lu(js);
    if (!(lu.rcond() > 1e-14)) throw NumericError("singular state Jacobian at power flow solution");
    const Matrix du_dx = -lu.solve(jx);

    // d(effective state)/dx: unknown rows from du_dx, fixed rows select x.
    const auto n_in = ix(layout_.n_in());
    Matrix de_dx = Matrix::Zero(ix(2 * n_), n_in);
    for (Idx c = 0; c < m; ++c) de_dx.row(ix(unknowns_[static_cast<std::size_t>(c)])) = du_dx.row(c);
    for (std::size_t k = 0; k < n_; ++k) {
        if (ang_input_[k] != npos) de_dx(ix(k), ix(ang_input_[k])) = 1.0;
        if (mag_input_[k] != npos) de_dx(ix(n_ + k), ix(mag_input_[k])) = 1.0;
    }

    const auto d = power_derivatives(effective(state, x));
    const auto n = ix(n_);
    Matrix jac(ix(layout_.n_out()), n_in);
    for (std::size_t i = 0; i < layout_.n_out(); ++i) {
        const auto& c = layout_.outputs()[i];
        const auto k = ix(c.bus);
        switch (c.quantity) {
            case Quantity::p_inj:
                jac.row(ix(i)) = d.dp_dth.row(k) * de_dx.topRows(n) + d.dp_dv.row(k) * de_dx.bottomRows(n);
                break;
            case Quantity::q_inj:
                jac.row(ix(i)) = d.dq_dth.row(k) * de_dx.topRows(n) + d.dq_dv.row(k) * de_dx.bottomRows(n);
                break;
            case Quantity::v_ang: jac.row(ix(i)) = de_dx.row(k); break;
            case Quantity::v_mag: jac.row(ix(i)) = de_dx.row(n + k); break;
        }
    }
    return jac;
}

std::vector<BranchFlow> PowerFlow::branch_flows(const Vector& state, const PfInput& x) const {
    check_dims(state, x);
    const Vector eff = effective(state, x);
    std::vector<BranchFlow> flows;
    flows.reserve(grid_.branches.size());
    for (const auto& br : grid_.branches) {
        if (!br.status) {
            flows.push_back({});
            continue;
        }
        const auto f = grid_.bus_index(br.from_bus);
        const auto t = grid_.bus_index(br.to_bus);
        const Complex vf = std::polar(eff[ix(n_ + f)], eff[ix(f)]);
        const Complex vt = std::polar(eff[ix(n_ + t)], eff[ix(t)]);
        const Complex ys = 1.0 / Complex(br.r, br.x);
        const Complex tap = std::polar(br.tap, br.shift);
        const Complex ytt = ys + Complex(0.0, br.b_charging / 2.0);
        const Complex i_f = ytt / std::norm(tap) * vf - ys / std::conj(tap) * vt;
        const Complex i_t = -ys / tap * vf + ytt * vt;
        const Complex sf = vf * std::conj(i_f);
        const Complex st = vt * std::conj(i_t);
        flows.push_back({sf.real(), sf.imag(), st.real(), st.imag()});
    }
    return flows;
}

double PowerFlow::conservation_error(const Vector& state, const PfInput& x) const {
    const auto [p, q] = injections(state, x);
    const Vector eff = effective(state, x);
    double generation = 0.0;
    double load = 0.0;
    for (std::size_t k = 0; k < n_; ++k) {
        // net injection = generation - load
        generation += p[ix(k)] + grid_.buses[k].pd;
        load += grid_.buses[k].pd;
    }
    double losses = 0.0;
    for (const auto& fl : branch_flows(state, x)) losses += fl.p_from + fl.p_to;
    for (std::size_t k = 0; k < n_; ++k) {
        const double v = eff[ix(n_ + k)];
        losses += grid_.buses[k].gs * v * v;
    }
    return generation - load - losses;
}

Vector PowerFlow::balance_mismatch(const PfInput& x, const PfOutput& y) const {
    if (static_cast<std::size_t>(y.flat.size()) != layout_.n_out()) throw DimensionError("output has wrong size");
    if (static_cast<std::size_t>(x.flat.size()) != layout_.n_in()) throw DimensionError("input has wrong size");
    Vector eff = Vector::Zero(ix(2 * n_));
    Vector p_spec = Vector::Zero(ix(n_));
    Vector q_spec = Vector::Zero(ix(n_));
    for (std::size_t i = 0; i < layout_.n_in(); ++i) {
        const auto& c = layout_.inputs()[i];
        const double v = x.flat[ix(i)];
        switch (c.quantity) {
            case Quantity::p_inj: p_spec[ix(c.bus)] = v; break;
            case Quantity::q_inj: q_spec[ix(c.bus)] = v; break;
            case Quantity::v_ang: eff[ix(c.bus)] = v; break;
            case Quantity::v_mag: eff[ix(n_ + c.bus)] = v; break;
        }
    }
    for (std::size_t i = 0; i < layout_.n_out(); ++i) {
        const auto& c = layout_.outputs()[i];
        const double v = y.flat[ix(i)];
        switch (c.quantity) {
            case Quantity::p_inj: p_spec[ix(c.bus)] = v; break;
            case Quantity::q_inj: q_spec[ix(c.bus)] = v; break;
            case Quantity::v_ang: eff[ix(c.bus)] = v; break;
            case Quantity::v_mag: eff[ix(n_ + c.bus)] = v; break;
        }
    }
    const auto d = power_derivatives(eff);
    Vector r(ix(2 * n_));
    r.head(ix(n_)) = d.p - p_spec;
    r.tail(ix(n_)) = d.q - q_spec;
    return r;
}

Matrix PowerFlow::balance_jacobian_output(const PfInput& x, const PfOutput& y) const {
    if (static_cast<std::size_t>(y.flat.size()) != layout_.n_out()) throw DimensionError("output has wrong size");
    Vector eff = Vector::Zero(ix(2 * n_));
    for (std::size_t i = 0; i < layout_.n_in(); ++i) {
        const auto& c = layout_.inputs()[i];
        if (c.quantity == Quantity::v_ang) eff[ix(c.bus)] = x.flat[ix(i)];
        if (c.quantity == Quantity::v_mag) eff[ix(n_ + c.bus)] = x.flat[ix(i)];
    }
    for (std::size_t i = 0; i < layout_.n_out(); ++i) {
        const auto& c = layout_.outputs()[i];
        if (c.quantity == Quantity::v_ang) eff[ix(c.bus)] = y.flat[ix(i)];
        if (c.quantity == Quantity::v_mag) eff[ix(n_ + c.bus)] = y.flat[ix(i)];
    }
    const auto d = power_derivatives(eff);
    const auto n = ix(n_);
    Matrix jac = Matrix::Zero(2 * n, ix(layout_.n_out()));
    for (std::size_t i = 0; i < layout_.n_out(); ++i) {
        const auto& c = layout_.outputs()[i];
        const auto col = ix(i);
        const auto k = ix(c.bus);
        switch (c.quantity) {
            case Quantity::p_inj: jac(k, col) = -1.0; break;
            case Quantity::q_inj: jac(n + k, col) = -1.0; break;
            case Quantity::v_ang:
                jac.col(col).head(n) = d.dp_dth.col(k);
                jac.col(col).tail(n) = d.dq_dth.col(k);
                break;
            case Quantity::v_mag:
                jac.col(col).head(n) = d.dp_dv.col(k);
                jac.col(col).tail(n) = d.dq_dv.col(k);
                break;
        }
    }
    return jac;
}

nlohmann::json to_json(const PfSolution& sol) {
    auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    return {{"state", vec(sol.state)},
            {"output", vec(sol.output.flat)},
            {"residual_norm", sol.residual_norm},
            {"iterations", sol.iterations},
            {"converged", sol.converged},
            {"diagnostic", sol.diagnostic}};
}

PfSolution pf_solution_from_json(const nlohmann::json& j) {
    auto vec = [](const nlohmann::json& a) {
        const auto v = a.get<std::vector<double>>();
        return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Idx>(v.size())));
    };
    PfSolution sol;
    sol.state = vec(j.at("state"));
    sol.output.flat = vec(j.at("output"));
    sol.residual_norm = j.at("residual_norm").get<double>();
    sol.iterations = j.at("iterations").get<int>();
    sol.converged = j.at("converged").get<bool>();
    sol.diagnostic = j.value("diagnostic", std::string());
    return sol;
}

Vector mismatch(const GridCase& grid, const Vector& state, const PfInput& x) {
    return PowerFlow(grid).mismatch(state, x);
}
Matrix jacobian_state(const GridCase& grid, const Vector& state, const PfInput& x) {
    return PowerFlow(grid).jacobian_state(state, x);
}
Matrix jacobian_input(const GridCase& grid, const Vector& state, const PfInput& x) {
    return PowerFlow(grid).jacobian_input(state, x);
}
PfSolution solve_pf(const GridCase& grid, const PfInput& x, const std::optional<Vector>& init,
                    const NewtonOptions& options) {
    return PowerFlow(grid).solve(x, init, options);
}
Matrix pf_output_jacobian(const GridCase& grid, const PfSolution& solution, const PfInput& x) {
    return PowerFlow(grid).output_jacobian(solution, x);
}

}  // namespace acpf_adv
