#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "acpf_adv/report.hpp"
#include "fixtures.hpp"

using namespace acpf_adv;
using namespace acpf_adv::testing;

namespace {

AttackResult constrained_result(int point, int bus_id, bool converged, double l1, int l0, double y_nn = 0.95,
                                double y_pf = 0.9) {
    AttackResult r;
    r.mode = AttackMode::ConstrainedError;
    r.key = fmt::format("con/{:04d}/{:04d}", point, bus_id);
    r.point = point;
    r.bus_id = bus_id;
    r.target = 0;
    r.x0 = Vector::Zero(28);
    r.x = r.x0;
    for (int k = 0; k < l0; ++k) r.x[k] = l1 / l0;
    r.y_nn = Vector::Constant(28, y_nn);
    r.y_pf = Vector::Constant(28, y_pf);
    r.l1_norm = l1;
    r.l0_count = l0;
    r.status = converged ? SolverStatus::Optimal : SolverStatus::Infeasible;
    r.pf_converged = true;
    return r;
}

AttackResult max_result(int bus_id, AttackMode mode, bool converged, double error) {
    AttackResult r;
    r.mode = mode;
    r.key = fmt::format("max/{:04d}/{}", bus_id, mode == AttackMode::MaxError ? "0max" : "1min");
    r.bus_id = bus_id;
    r.target_name = fmt::format("v_mag@{}", bus_id);
    r.error = error;
    r.status = converged ? SolverStatus::Optimal : SolverStatus::IterLimit;
    r.pf_converged = true;
    return r;
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

std::size_t comma_fields(const std::string& line) { return static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1; }

}  // namespace

TEST_CASE("empty results give empty tables") {
    const PfLayout layout(case14());
    const std::vector<AttackResult> none;
    CHECK(perturbation_summary(none).empty());
    CHECK(selected_cases(none, layout).empty());
    CHECK(l1_histogram(none).empty());
    CHECK(per_bus_max_error(none).empty());
    const auto csv = lines(to_csv(make_table(l1_histogram(none)), {{"case_name", "x"}}));
    REQUIRE(csv.size() == 2);
    CHECK(csv[0] == R"(# provenance: {"case_name":"x"})");
    CHECK(csv[1] == "bin_lower,bin_upper,count");
    CHECK(to_text(make_table(per_bus_max_error(none))).find("(no rows)") != std::string::npos);
    CHECK_THROWS_AS(l1_histogram(none, 0), ConfigError);
}

TEST_CASE("perturbation summary averages converged attempts") {
    std::vector<AttackResult> rs{
        constrained_result(3, 4, true, 0.2, 2, 0.95, 0.90),
        constrained_result(3, 5, true, 0.4, 3, 0.97, 0.88),
        constrained_result(3, 7, false, 9.0, 9, 0.10, 0.10),
        constrained_result(1, 4, false, 1.0, 1),
    };
    rs.push_back(max_result(4, AttackMode::MaxError, true, 0.1));  // ignored
    const auto rows = perturbation_summary(rs);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].point == 1);
    CHECK(rows[0].attempted == 1);
    CHECK(rows[0].converged == 0);
    CHECK(std::isnan(rows[0].l1_mean));
    CHECK(rows[1].point == 3);
    CHECK(rows[1].attempted == 3);
    CHECK(rows[1].converged == 2);
    CHECK(rows[1].l1_mean == doctest::Approx(0.3));
    CHECK(rows[1].l0_mean == 2.5);
    CHECK(rows[1].y_nn_mean == doctest::Approx(0.96));
    CHECK(rows[1].y_pf_mean == doctest::Approx(0.89));

    const auto t = make_table(rows);
    CHECK(t.columns.size() == 6);
    const auto csv = lines(to_csv(t, nlohmann::json::object()));
    CHECK(csv[1] == "# attempted per point: 1 3");
    CHECK(csv[2] == "# converged total: 2 of 4");
    CHECK(csv[4].rfind("1,0,nan,nan,nan,nan", 0) == 0);
}

TEST_CASE("selected cases keep the lowest L1 per L0") {
    const PfLayout layout(case14());
    std::vector<AttackResult> rs{
        constrained_result(0, 4, true, 0.30, 2), constrained_result(1, 4, true, 0.10, 2),
        constrained_result(2, 4, true, 0.05, 1), constrained_result(3, 4, true, 0.20, 3),
        constrained_result(4, 4, false, 0.01, 1), constrained_result(5, 4, true, 0.10, 2),
    };
    const auto one = selected_cases(rs, layout, 1);
    REQUIRE(one.size() == 3);
    CHECK(one[0].point == 2);
    CHECK(one[1].point == 1);  // ties on L1 fall back to key order
    CHECK(one[2].point == 3);
    REQUIRE(one[0].variables.size() == 1);
    CHECK(one[0].variables[0].first == layout.inputs()[0].name());
    CHECK(one[0].variables[0].second == 0.05);
    const auto two = selected_cases(rs, layout, 2);
    REQUIRE(two.size() == 4);
    CHECK(two[2].point == 5);
    const auto t = make_table(one);
    CHECK(t.columns.size() == 5);
    CHECK(t.rows[0][4] == layout.inputs()[0].name() + "=0.05");
}

TEST_CASE("histogram conserves converged results") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 0.7);
    std::vector<AttackResult> rs;
    std::size_t converged = 0;
    for (int k = 0; k < 200; ++k) {
        const bool ok = k % 3 != 0;
        converged += ok;
        rs.push_back(constrained_result(k / 9, 4 + k % 9, ok, u(rng), 1 + k % 4));
    }
    rs.push_back(constrained_result(99, 4, true, 0.7, 1));  // the maximum sits on the last edge
    ++converged;
    for (std::size_t bins : {1u, 7u, 10u}) {
        const auto h = l1_histogram(rs, bins);
        REQUIRE(h.size() == bins);
        std::size_t total = 0;
        for (const auto& b : h) total += b.count;
        CHECK(total == converged);
        CHECK(h.front().lower == 0.0);
        CHECK(h.back().upper == 0.7);
        for (std::size_t b = 1; b < bins; ++b) CHECK(h[b].lower == h[b - 1].upper);
    }
    const auto zero = l1_histogram({constrained_result(0, 4, true, 0.0, 0)});
    REQUIRE(zero.size() == 1);
    CHECK(zero[0].count == 1);

    // perturbation summary counts sum to the same total
    std::size_t summed = 0;
    for (const auto& r : perturbation_summary(rs)) summed += r.converged;
    CHECK(summed == converged);
}

TEST_CASE("per-bus table combines both senses") {
    const std::vector<AttackResult> rs{
        max_result(4, AttackMode::MaxError, true, 0.02), max_result(4, AttackMode::MinError, true, -0.05),
        max_result(2, AttackMode::MaxError, false, 3.0), max_result(2, AttackMode::MinError, true, -0.01),
        max_result(9, AttackMode::MinError, false, 1.0),
    };
    const auto rows = per_bus_max_error(rs);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].bus_id == 2);
    CHECK(std::isnan(rows[0].max_error));
    CHECK(rows[0].max_status == SolverStatus::IterLimit);
    CHECK(rows[0].max_abs_error == 0.01);
    CHECK(rows[1].bus_id == 4);
    CHECK(rows[1].max_abs_error == 0.05);
    CHECK(std::isnan(rows[2].max_abs_error));
    CHECK(make_table(rows).columns.size() == 7);
}

TEST_CASE("loss table rows") {
    const auto grid = case14();
    const auto oracle = make_oracle_surrogate(grid);
    const auto x = bounded_nominal_input(grid).flat;
    const auto rows = loss_table(grid, *oracle, {{"Train", {x}}, {"Test", {x, x}}, {"Adversarial", {x}}});
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].count == 1);
    CHECK(rows[1].count == 2);
    CHECK(rows[0].mse_mean == 0.0);
    CHECK(rows[0].mse_std == 0.0);
    CHECK(rows[0].mse_max == 0.0);
    CHECK(rows[0].pbl_mean < 1e-8);
    const auto t = make_table(rows);
    CHECK(t.columns.size() == 8);
    CHECK(t.rows.size() == 3);
    CHECK(t.rows[2][0] == "Adversarial");
    CHECK_THROWS_AS(loss_table(grid, *oracle, {{"Empty", {}}}), ConfigError);
}

TEST_CASE("tables recompute bit-identically from the results file") {
    const auto grid = case14();
    const PfLayout layout(grid);
    const auto model = make_biased_oracle(grid, layout.output_index(14, Quantity::v_mag), 0.1);
    const auto data = gen_dataset(grid, 2, {}, 11);
    const std::vector<TrainingPoint> points{{0, data[0].x}, {1, data[1].x}};
    CampaignOptions opt;
    opt.lower_bound = data[0].y[static_cast<Eigen::Index>(layout.output_index(14, Quantity::v_mag))];
    opt.delta = 0.01;
    auto results = run_constrained_campaign(grid, *model, points, {12, 13, 14}, opt);
    const auto max_results = run_max_error_campaign(grid, *model);
    results.insert(results.end(), max_results.begin(), max_results.end());

    auto render = [&](const std::vector<AttackResult>& rs) {
        const nlohmann::json prov{{"case_name", grid.name}};
        return to_csv(make_table(perturbation_summary(rs)), prov) + to_csv(make_table(selected_cases(rs, layout, 2)), prov) +
               to_csv(make_table(l1_histogram(rs, 5)), prov) + to_csv(make_table(per_bus_max_error(rs)), prov) +
               to_csv(make_table(loss_table(grid, *model, {{"Adversarial", adversarial_points(rs)}})), prov);
    };
    const auto path = std::filesystem::temp_directory_path() / "acpf_adv_test_report.jsonl";
    save_results(results, path, {{"case_name", grid.name}});
    const auto loaded = load_results(path).results;
    std::filesystem::remove(path);
    const auto direct = render(results);
    CHECK(render(loaded) == direct);
    CHECK(direct.find("# converged total: ") != std::string::npos);

    const auto dir = std::filesystem::temp_directory_path() / "acpf_adv_test_report";
    write_table(make_table(per_bus_max_error(results)), dir, {{"case_name", grid.name}});
    CHECK(std::filesystem::exists(dir / "per_bus_max_error.csv"));
    CHECK(std::filesystem::exists(dir / "per_bus_max_error.txt"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("csv quoting and text alignment") {
    Table t{"t", "title", {"a", "long_name"}, {{"x,y", "1.23456789"}, {"say \"hi\"", "2"}}, {}};
    const auto csv = lines(to_csv(t, nlohmann::json::object()));
    CHECK(csv[2] == "\"x,y\",1.23456789");
    CHECK(csv[3] == "\"say \"\"hi\"\"\",2");
    const auto text = lines(to_text(t));
    CHECK(text[0] == "title");
    CHECK(text[1] == "a         long_name");
    CHECK(text[3] == "x,y       1.235");
    CHECK(comma_fields(csv[1]) == 2);
}
