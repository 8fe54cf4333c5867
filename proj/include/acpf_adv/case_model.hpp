#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "acpf_adv/errors.hpp"

namespace acpf_adv {

enum class BusKind { PQ, PV, REF };

std::string_view to_string(BusKind kind);
BusKind bus_kind_from_string(std::string_view text);

struct Bus {
    int id = 0;
    BusKind kind = BusKind::PQ;
    double base_kv = 0.0;
    double v_min = 0.9;
    double v_max = 1.1;
    double gs = 0.0;  // per-unit shunt conductance at V = 1
    double bs = 0.0;  // per-unit shunt susceptance at V = 1
    double pd = 0.0;
    double qd = 0.0;

    bool operator==(const Bus&) const = default;
};

struct Branch {
    int from_bus = 0;
    int to_bus = 0;
    double r = 0.0;
    double x = 0.0;
    double b_charging = 0.0;
    double tap = 1.0;
    double shift = 0.0;  // radians
    double rate_a = 0.0; // per-unit; parsed, not used by any formulation
    bool status = true;

    bool operator==(const Branch&) const = default;
};

struct Generator {
    int bus = 0;
    double pg = 0.0;  // nominal dispatch
    double p_min = 0.0;
    double p_max = 0.0;
    double q_min = 0.0;
    double q_max = 0.0;
    double vg = 1.0;
    bool status = true;

    bool operator==(const Generator&) const = default;
};

/// Static network description, all quantities per-unit on `base_mva` except
/// `Bus::base_kv`. Buses are kept sorted by id. Immutable once built; share by
/// const reference.
struct GridCase {
    std::string name;
    double base_mva = 100.0;
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::vector<Generator> generators;

    std::size_t n_bus() const { return buses.size(); }

    /// Position of bus `id` in `buses`; throws ValidationError if absent.
    std::size_t bus_index(int id) const;
    std::size_t ref_index() const;

    bool operator==(const GridCase&) const = default;
};

struct Violation {
    std::string element;  // e.g. "bus 4", "branch 7 (4-99)"
    std::string message;
};

std::vector<Violation> validate(const GridCase& grid);

/// Throws ValidationError listing every violation if `grid` is not valid.
void require_valid(const GridCase& grid);

/// Parses the MATPOWER subset: mpc.baseMVA, mpc.bus, mpc.gen, mpc.branch.
/// Other `mpc.*` fields are skipped with a warning. Result is validated. The
/// case name comes from the `function mpc = <name>` line when present.
GridCase parse_matpower(std::string_view text, std::string name = "case");

nlohmann::json to_json(const GridCase& grid);
GridCase grid_case_from_json(const nlohmann::json& j);

/// Dispatches on extension: `.m` -> MATPOWER, anything else -> JSON.
GridCase load_case(const std::filesystem::path& path);
void save_case_json(const GridCase& grid, const std::filesystem::path& path);

}  // namespace acpf_adv
