#include "acpf_adv/layout.hpp"

namespace acpf_adv {

std::string_view to_string(Quantity q) {
    switch (q) {
        case Quantity::p_inj: return "p_inj";
        case Quantity::q_inj: return "q_inj";
        case Quantity::v_ang: return "v_ang";
        case Quantity::v_mag: return "v_mag";
    }
    return "?";
}

Quantity quantity_from_string(std::string_view text) {
    if (text == "p_inj" || text == "p") return Quantity::p_inj;
    if (text == "q_inj" || text == "q") return Quantity::q_inj;
    if (text == "v_ang" || text == "va") return Quantity::v_ang;
    if (text == "v_mag" || text == "v" || text == "vm") return Quantity::v_mag;
    throw ValidationError("unknown quantity '" + std::string(text) + "'");
}

std::string Coord::name() const { return std::string(to_string(quantity)) + "@" + std::to_string(bus_id); }

PfLayout::PfLayout(const GridCase& grid) : n_bus_(grid.n_bus()) {
    for (std::size_t k = 0; k < grid.buses.size(); ++k) {
        const auto& bus = grid.buses[k];
        auto in = [&](Quantity q) { inputs_.push_back({bus.id, k, bus.kind, q}); };
        auto out = [&](Quantity q) { outputs_.push_back({bus.id, k, bus.kind, q}); };
        switch (bus.kind) {
            case BusKind::PV:
                in(Quantity::p_inj), in(Quantity::v_mag);
                out(Quantity::q_inj), out(Quantity::v_ang);
                break;
            case BusKind::PQ:
                in(Quantity::p_inj), in(Quantity::q_inj);
                out(Quantity::v_ang), out(Quantity::v_mag);
                break;
            case BusKind::REF:
                in(Quantity::v_ang), in(Quantity::v_mag);
                out(Quantity::p_inj), out(Quantity::q_inj);
                break;
        }
    }
}

namespace {
std::optional<std::size_t> find(const std::vector<Coord>& coords, int bus_id, Quantity q) {
    for (std::size_t i = 0; i < coords.size(); ++i)
        if (coords[i].bus_id == bus_id && coords[i].quantity == q) return i;
    return std::nullopt;
}
}  // namespace

std::optional<std::size_t> PfLayout::find_input(int bus_id, Quantity q) const { return find(inputs_, bus_id, q); }
std::optional<std::size_t> PfLayout::find_output(int bus_id, Quantity q) const { return find(outputs_, bus_id, q); }

std::size_t PfLayout::input_index(int bus_id, Quantity q) const {
    if (auto i = find_input(bus_id, q)) return *i;
    throw ValidationError("bus " + std::to_string(bus_id) + " has no input " + std::string(to_string(q)));
}

std::size_t PfLayout::output_index(int bus_id, Quantity q) const {
    if (auto i = find_output(bus_id, q)) return *i;
    throw ValidationError("bus " + std::to_string(bus_id) + " has no output " + std::string(to_string(q)));
}

namespace {

struct GenSummary {
    double pg = 0.0;
    double p_min = 0.0;
    double p_max = 0.0;
    std::optional<double> vg;
};

std::vector<GenSummary> summarize_generators(const GridCase& grid) {
    std::vector<GenSummary> out(grid.n_bus());
    for (const auto& gen : grid.generators) {
        if (!gen.status) continue;
        auto& s = out[grid.bus_index(gen.bus)];
        s.pg += gen.pg;
        s.p_min += gen.p_min;
        s.p_max += gen.p_max;
        if (!s.vg) s.vg = gen.vg;
    }
    return out;
}

}  // namespace

PfInput nominal_input(const GridCase& grid) {
    const PfLayout layout(grid);
    const auto gens = summarize_generators(grid);
    PfInput x{Vector::Zero(static_cast<Eigen::Index>(layout.n_in()))};
    for (std::size_t i = 0; i < layout.n_in(); ++i) {
        const auto& c = layout.inputs()[i];
        const auto& bus = grid.buses[c.bus];
        const auto& gen = gens[c.bus];
        double value = 0.0;
        switch (c.quantity) {
            case Quantity::p_inj: value = gen.pg - bus.pd; break;
            case Quantity::q_inj: value = -bus.qd; break;
            case Quantity::v_ang: value = 0.0; break;
            case Quantity::v_mag: value = gen.vg.value_or(1.0); break;
        }
        x.flat[static_cast<Eigen::Index>(i)] = value;
    }
    return x;
}

std::vector<bool> InputBounds::fixed_mask() const {
    std::vector<bool> mask(static_cast<std::size_t>(lower.size()));
    for (Eigen::Index i = 0; i < lower.size(); ++i) mask[static_cast<std::size_t>(i)] = lower[i] == upper[i];
    return mask;
}

Vector InputBounds::project(const Vector& x) const { return x.cwiseMax(lower).cwiseMin(upper); }

InputBounds input_bounds(const GridCase& grid) {
    const PfLayout layout(grid);
    const auto gens = summarize_generators(grid);
    const auto n = static_cast<Eigen::Index>(layout.n_in());
    InputBounds b{Vector::Zero(n), Vector::Zero(n)};
    for (std::size_t i = 0; i < layout.n_in(); ++i) {
        const auto& c = layout.inputs()[i];
        const auto& bus = grid.buses[c.bus];
        double lo = 0.0;
        double hi = 0.0;
        switch (c.kind) {
            case BusKind::PV:
                if (c.quantity == Quantity::p_inj) {
                    lo = gens[c.bus].p_min - bus.pd;
                    hi = gens[c.bus].p_max - bus.pd;
                } else {
                    lo = bus.v_min;
                    hi = bus.v_max;
                }
                break;
            case BusKind::PQ:
                lo = hi = c.quantity == Quantity::p_inj ? -bus.pd : -bus.qd;
                break;
            case BusKind::REF:
                lo = hi = c.quantity == Quantity::v_ang ? 0.0 : kRefVoltage;
                break;
        }
        b.lower[static_cast<Eigen::Index>(i)] = lo;
        b.upper[static_cast<Eigen::Index>(i)] = hi;
    }
    return b;
}

}  // namespace acpf_adv
