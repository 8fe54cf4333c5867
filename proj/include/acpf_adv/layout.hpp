#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "acpf_adv/case_model.hpp"

namespace acpf_adv {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class Quantity { p_inj, q_inj, v_ang, v_mag };

std::string_view to_string(Quantity q);
Quantity quantity_from_string(std::string_view text);

/// One coordinate of the flat input or output vector.
struct Coord {
    int bus_id = 0;
    std::size_t bus = 0;  // position in GridCase::buses
    BusKind kind = BusKind::PQ;
    Quantity quantity = Quantity::p_inj;

    /// e.g. "v_mag@12"
    std::string name() const;
};

/// Deterministic flat ordering of the power flow inputs x and outputs y.
///
/// Buses are visited in id order. Per bus the inputs are
///   PV: p_inj, v_mag    PQ: p_inj, q_inj    REF: v_ang, v_mag
/// and the outputs are
///   PV: q_inj, v_ang    PQ: v_ang, v_mag    REF: p_inj, q_inj
class PfLayout {
  public:
    explicit PfLayout(const GridCase& grid);

    std::size_t n_bus() const { return n_bus_; }
    std::size_t n_in() const { return inputs_.size(); }
    std::size_t n_out() const { return outputs_.size(); }
    const std::vector<Coord>& inputs() const { return inputs_; }
    const std::vector<Coord>& outputs() const { return outputs_; }

    std::optional<std::size_t> find_input(int bus_id, Quantity q) const;
    std::optional<std::size_t> find_output(int bus_id, Quantity q) const;
    /// Throws ValidationError when the bus does not carry that quantity.
    std::size_t input_index(int bus_id, Quantity q) const;
    std::size_t output_index(int bus_id, Quantity q) const;

  private:
    std::size_t n_bus_ = 0;
    std::vector<Coord> inputs_;
    std::vector<Coord> outputs_;
};

struct PfInput {
    Vector flat;
};

struct PfOutput {
    Vector flat;
};

/// Inputs as written in the case file: PV p_inj = sum(pg) - pd at the case
/// setpoint vg, PQ injections = -load, REF angle 0 and magnitude vg.
PfInput nominal_input(const GridCase& grid);

struct InputBounds {
    Vector lower;
    Vector upper;

    /// Coordinates whose bounds are degenerate.
    std::vector<bool> fixed_mask() const;
    Vector project(const Vector& x) const;
};

/// Box for the attack inputs. PV active injections range over
/// [sum(p_min) - pd, sum(p_max) - pd] of the in-service generators at the
/// bus; PV magnitudes over [v_min, v_max]. Loads and the REF angle (0) and
/// magnitude (1.0) are fixed.
InputBounds input_bounds(const GridCase& grid);

/// Reference-bus magnitude pinned by `input_bounds`.
inline constexpr double kRefVoltage = 1.0;

}  // namespace acpf_adv
