#include <doctest.h>

#include <fstream>
#include <sstream>

#include "acpf_adv/case_model.hpp"
#include "acpf_adv/layout.hpp"
#include "fixtures.hpp"

using namespace acpf_adv;
using acpf_adv::testing::case14;
using acpf_adv::testing::two_bus_text;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Raw numeric rows of one matrix block, read without the library parser.
std::vector<std::vector<double>> raw_rows(const std::string& text, const std::string& field) {
    std::vector<std::vector<double>> rows;
    auto start = text.find("mpc." + field + " = [");
    REQUIRE(start != std::string::npos);
    std::istringstream in(text.substr(text.find('\n', start) + 1));
    std::string line;
    while (std::getline(in, line) && line.find("];") == std::string::npos) {
        std::replace(line.begin(), line.end(), ';', ' ');
        std::istringstream ls(line);
        std::vector<double> row;
        double v;
        while (ls >> v) row.push_back(v);
        if (!row.empty()) rows.push_back(row);
    }
    return rows;
}

}  // namespace

TEST_CASE("bundled 14-bus case parses with the expected element counts") {
    const auto grid = case14();
    CHECK(grid.n_bus() == 14);
    CHECK(grid.branches.size() == 20);
    CHECK(grid.generators.size() == 5);
    CHECK(grid.base_mva == 100.0);
    CHECK(validate(grid).empty());
    CHECK(grid.buses[grid.ref_index()].id == 1);

    int n_pq = 0;
    for (const auto& b : grid.buses) {
        if (b.kind == BusKind::PQ) {
            ++n_pq;
            CHECK(b.v_min == 0.94);
            CHECK(b.v_max == 1.06);
        }
    }
    CHECK(n_pq == 9);
}

TEST_CASE("per-unit conversion reproduces the file values") {
    const std::string path = std::string(ACPF_ADV_DATA_DIR) + "/case14.m";
    const auto text = read_file(path);
    const auto grid = parse_matpower(text);
    const auto bus_rows = raw_rows(text, "bus");
    REQUIRE(bus_rows.size() == grid.buses.size());
    auto close = [](double pu, double base, double raw) {
        return std::abs(pu * base - raw) <= 1e-12 * std::max(1.0, std::abs(raw));
    };
    for (std::size_t k = 0; k < bus_rows.size(); ++k) {
        const auto& b = grid.buses[grid.bus_index(static_cast<int>(bus_rows[k][0]))];
        CHECK(close(b.pd, grid.base_mva, bus_rows[k][2]));
        CHECK(close(b.qd, grid.base_mva, bus_rows[k][3]));
        CHECK(close(b.bs, grid.base_mva, bus_rows[k][5]));
    }
    const auto gen_rows = raw_rows(text, "gen");
    for (std::size_t k = 0; k < gen_rows.size(); ++k) {
        CHECK(close(grid.generators[k].p_max, grid.base_mva, gen_rows[k][8]));
        CHECK(close(grid.generators[k].q_min, grid.base_mva, gen_rows[k][4]));
    }
    const auto br_rows = raw_rows(text, "branch");
    CHECK(close(grid.branches[9].tap, 1.0, br_rows[9][8]));
    CHECK(grid.branches[0].tap == 1.0);
}

TEST_CASE("minimal two-bus text parses") {
    const auto grid = parse_matpower(two_bus_text());
    CHECK(grid.n_bus() == 2);
    CHECK(grid.buses[0].kind == BusKind::REF);
    CHECK(grid.buses[1].kind == BusKind::PQ);
    CHECK(grid.branches.size() == 1);
}

TEST_CASE("parse errors") {
    SUBCASE("two REF buses") {
        auto text = two_bus_text();
        text.replace(text.find("  2 1 "), 6, "  2 3 ");
        CHECK_THROWS_AS(parse_matpower(text), ValidationError);
    }
    SUBCASE("dangling branch endpoint") {
        auto text = two_bus_text();
        text.replace(text.find("  1 2 "), 6, "  1 99 ");
        CHECK_THROWS_AS(parse_matpower(text), ValidationError);
    }
    SUBCASE("duplicate bus id") {
        auto text = two_bus_text();
        text.replace(text.find("  2 1 "), 6, "  1 1 ");
        CHECK_THROWS_AS(parse_matpower(text), ValidationError);
    }
    SUBCASE("garbage in a row reports its line") {
        auto text = two_bus_text();
        text.replace(text.find("230"), 3, "2x0");
        try {
            parse_matpower(text);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line() == 3);
        }
    }
    SUBCASE("missing block") {
        CHECK_THROWS_AS(parse_matpower("mpc.baseMVA = 100;\n"), ParseError);
    }
}

TEST_CASE("validate names the offending element") {
    auto grid = parse_matpower(two_bus_text());
    SUBCASE("v_min above v_max") {
        grid.buses[1].v_min = 1.2;
        const auto v = validate(grid);
        REQUIRE(v.size() == 1);
        CHECK(v[0].element == "bus 2");
    }
    SUBCASE("branch to nonexistent bus") {
        grid.branches[0].to_bus = 99;
        const auto v = validate(grid);
        REQUIRE(v.size() == 1);
        CHECK(v[0].element.find("branch 1") == 0);
        CHECK(v[0].element.find("99") != std::string::npos);
    }
}

TEST_CASE("JSON case round trip is field-exact") {
    const auto grid = case14();
    const auto back = grid_case_from_json(nlohmann::json::parse(to_json(grid).dump()));
    CHECK(back == grid);

    // the shipped JSON copy mirrors the MATPOWER file
    const auto shipped = load_case(std::string(ACPF_ADV_DATA_DIR) + "/case14.json");
    CHECK(shipped == grid);
}

TEST_CASE("input bounds") {
    const auto grid = case14();
    const auto b = input_bounds(grid);
    const PfLayout layout(grid);
    CHECK((b.lower.array() <= b.upper.array()).all());

    const auto ref_ang = layout.input_index(1, Quantity::v_ang);
    const auto ref_mag = layout.input_index(1, Quantity::v_mag);
    CHECK(b.lower[ref_ang] == 0.0);
    CHECK(b.upper[ref_ang] == 0.0);
    CHECK(b.lower[ref_mag] == 1.0);
    CHECK(b.upper[ref_mag] == 1.0);

    const auto v2 = layout.input_index(2, Quantity::v_mag);
    CHECK(b.lower[v2] == 0.94);
    CHECK(b.upper[v2] == 1.06);
    const auto p2 = layout.input_index(2, Quantity::p_inj);
    CHECK(b.lower[p2] == doctest::Approx(0.0 - 0.217));
    CHECK(b.upper[p2] == doctest::Approx(0.59 - 0.217));

    // loads are fixed at their nominal values
    const auto p4 = layout.input_index(4, Quantity::p_inj);
    CHECK(b.lower[p4] == -0.478);
    CHECK(b.upper[p4] == -0.478);

    const auto mask = b.fixed_mask();
    int n_free = 0;
    for (bool f : mask) n_free += f ? 0 : 1;
    CHECK(n_free == 5);  // p_inj@2 and four PV magnitudes
}

TEST_CASE("input bounds pass generator limits through") {
    // generator at a PV bus with p_min = 0, p_max = 1 and no load
    const std::string text =
        "mpc.baseMVA = 100;\n"
        "mpc.bus = [ 1 3 0 0 0 0 1 1 0 1 1 1.1 0.9; 2 2 0 0 0 0 1 1 0 1 1 1.05 0.95 ];\n"
        "mpc.gen = [ 1 0 0 1 -1 1 100 1 100 0; 2 50 0 1 -1 1 100 1 100 0 ];\n"
        "mpc.branch = [ 1 2 0.01 0.1 0 0 0 0 0 0 1 -360 360 ];\n";
    const auto grid = parse_matpower(text);
    const auto b = input_bounds(grid);
    const PfLayout layout(grid);
    const auto p = layout.input_index(2, Quantity::p_inj);
    CHECK(b.lower[p] == 0.0);
    CHECK(b.upper[p] == 1.0);
}

TEST_CASE("layout ordering") {
    const auto grid = case14();
    const PfLayout layout(grid);
    CHECK(layout.n_in() == 28);
    CHECK(layout.n_out() == 28);
    CHECK(layout.inputs()[0].quantity == Quantity::v_ang);  // bus 1 is REF
    CHECK(layout.inputs()[1].quantity == Quantity::v_mag);
    CHECK(layout.outputs()[0].quantity == Quantity::p_inj);
    CHECK(layout.outputs()[2].quantity == Quantity::q_inj);  // bus 2 is PV
    CHECK(layout.outputs()[3].quantity == Quantity::v_ang);
    CHECK(layout.output_index(12, Quantity::v_mag) == 23);
    CHECK_THROWS_AS(layout.output_index(12, Quantity::q_inj), ValidationError);
}
