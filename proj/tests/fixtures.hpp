#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "acpf_adv/case_model.hpp"
#include "acpf_adv/layout.hpp"

namespace acpf_adv::testing {

inline GridCase case14() { return load_case(std::string(ACPF_ADV_DATA_DIR) + "/case14.m"); }

inline std::string two_bus_text(double r = 0.0, double x = 0.1, double pd_mw = 0.0, double qd_mvar = 0.0) {
    return "mpc.baseMVA = 100;\n"
           "mpc.bus = [\n"
           "  1 3 0 0 0 0 1 1.0 0 230 1 1.1 0.9;\n"
           "  2 1 " + std::to_string(pd_mw) + " " + std::to_string(qd_mvar) + " 0 0 1 1.0 0 230 1 1.1 0.9;\n"
           "];\n"
           "mpc.gen = [\n"
           "  1 0 0 100 -100 1.0 100 1 100 0;\n"
           "];\n"
           "mpc.branch = [\n"
           "  1 2 " + std::to_string(r) + " " + std::to_string(x) + " 0 0 0 0 0 0 1 -360 360;\n"
           "];\n";
}

/// REF + PQ bus joined by one line; load in per-unit on a 100 MVA base.
inline GridCase two_bus(double r = 0.0, double x = 0.1, double p_load = 0.0, double q_load = 0.0) {
    return parse_matpower(two_bus_text(r, x, p_load * 100.0, q_load * 100.0), "two_bus");
}

/// Central finite-difference Jacobian of f at x.
inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x, double h = 1e-6) {
    const Vector f0 = f(x);
    Matrix jac(f0.size(), x.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        Vector xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        jac.col(j) = (f(xp) - f(xm)) / (2.0 * h);
    }
    return jac;
}

/// max|a - b| / max(1, max|a|)
inline double rel_error(const Matrix& a, const Matrix& b) {
    const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    return (a - b).cwiseAbs().maxCoeff() / scale;
}

/// Random input: PV quantities uniform in their bounds, loads scaled by a
/// uniform factor in [0.8, 1.2], REF angle/magnitude at their fixed values.
inline PfInput random_input(const GridCase& grid, std::mt19937_64& rng) {
    const auto bounds = input_bounds(grid);
    const PfLayout layout(grid);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    PfInput x{bounds.lower};
    for (std::size_t i = 0; i < layout.n_in(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        const auto& c = layout.inputs()[i];
        if (c.kind == BusKind::PQ) {
            x.flat[k] = bounds.lower[k] * (0.8 + 0.4 * unit(rng));
        } else {
            x.flat[k] = bounds.lower[k] + (bounds.upper[k] - bounds.lower[k]) * unit(rng);
        }
    }
    return x;
}

}  // namespace acpf_adv::testing
