#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "acpf_adv/hash.hpp"
#include "acpf_adv/pipeline.hpp"
#include "fixtures.hpp"

using namespace acpf_adv;
using namespace acpf_adv::testing;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("acpf_adv_test_" + name);
    std::filesystem::remove_all(dir);
    return dir;
}

RunConfig small_config(const std::filesystem::path& out) {
    RunConfig c;
    c.seed = 5;
    c.dataset_size = 120;
    c.train.epochs = 5;
    c.train.hidden = {16};
    c.campaign.points = {0, 1};
    c.campaign.buses = {13, 14};
    c.campaign.deltas = {0.02, 0.04};
    c.out_dir = out;
    c.workers = 2;
    return c;
}

std::string read(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Results file with the header's run_info removed.
std::string stable_results(const std::filesystem::path& p) {
    std::istringstream in(read(p));
    std::string first, out;
    std::getline(in, first);
    auto header = nlohmann::json::parse(first);
    header.erase("run_info");
    out = header.dump() + "\n";
    for (std::string line; std::getline(in, line);) out += line + "\n";
    return out;
}

void run_all(const Run& run) {
    cmd_gen_data(run);
    cmd_train(run);
    cmd_attack_max(run);
    cmd_attack_con(run);
    cmd_eval(run);
}

}  // namespace

TEST_CASE("run config parsing") {
    const auto c = run_config_from_json({{"seed", 3}, {"campaign", {{"deltas", {0.01, 0.02}}}}, {"workers", 2}});
    CHECK(*c.seed == 3);
    CHECK(c.campaign.deltas == std::vector<double>{0.01, 0.02});
    CHECK(c.campaign.points.size() == 10);
    CHECK(c.workers == 2);
    const auto back = run_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));

    CHECK_THROWS_AS(run_config_from_json({{"sed", 3}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json({{"seed", 3}, {"workers", 0}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json({{"seed", 3}, {"campaign", {{"deltas", {-0.1}}}}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json({{"seed", "x"}}), ConfigError);
    CHECK_THROWS_AS(run_config_from_json(nlohmann::json::array()), ConfigError);

    RunConfig no_seed;
    CHECK_THROWS_WITH_AS(Run{no_seed}, doctest::Contains("seed"), ConfigError);
    RunConfig bad_case;
    bad_case.seed = 1;
    bad_case.case_path = "/nonexistent/case.m";
    CHECK_THROWS_AS(Run{bad_case}, ConfigError);
}

TEST_CASE("config hash ignores paths and workers") {
    auto a = small_config("/tmp/a");
    auto b = small_config("/tmp/b");
    b.workers = 7;
    CHECK(Run(a).config_hash == Run(b).config_hash);
    b.campaign.lower_bound = 0.93;
    CHECK(Run(a).config_hash != Run(b).config_hash);
}

TEST_CASE("missing artifacts are reported") {
    const Run run(small_config(fresh_dir("missing")));
    CHECK_THROWS_WITH_AS(cmd_train(run), doctest::Contains("dataset file not found"), ConfigError);
    CHECK_THROWS_WITH_AS(cmd_attack_max(run), doctest::Contains("model file not found"), ConfigError);
    CHECK_THROWS_AS(cmd_verify(run, run.config.out_dir / "nope.jsonl"), ConfigError);
}

TEST_CASE("pipeline end to end is reproducible") {
    const auto dir_a = fresh_dir("pipe_a");
    const auto dir_b = fresh_dir("pipe_b");
    const Run a(small_config(dir_a));
    auto cb = small_config(dir_b);
    cb.workers = 1;
    const Run b(cb);
    run_all(a);
    run_all(b);

    for (const auto* name : {"dataset.jsonl", "model.json", "train_log.csv", "eval/loss_table.csv",
                             "max/per_bus_max_error.csv", "con_delta_0.04/perturbation_summary.csv",
                             "con_delta_0.02/selected_cases.csv", "con_delta_0.02/l1_histogram.csv"}) {
        INFO(name);
        REQUIRE(std::filesystem::exists(dir_a / name));
        CHECK(read(dir_a / name) == read(dir_b / name));
        CHECK(read(dir_a / name).size() > 0);
    }
    for (const auto* name : {"max/results.jsonl", "con_delta_0.04/results.jsonl", "con_delta_0.02/results.jsonl"}) {
        INFO(name);
        CHECK(stable_results(dir_a / name) == stable_results(dir_b / name));
        const auto v = cmd_verify(a, dir_a / name);
        CHECK(v.at("inconsistent") == 0);
    }
    // every table starts with the provenance line naming case, config and model
    const auto first = read(dir_a / "eval/loss_table.csv").substr(0, 200);
    CHECK(first.rfind("# provenance: ", 0) == 0);
    CHECK(first.find(a.config_hash) != std::string::npos);
    CHECK(first.find("model_hash") != std::string::npos);
    CHECK(load_results(dir_a / "max/results.jsonl").provenance.at("case_name") == a.grid.name);

    std::filesystem::remove_all(dir_a);
    std::filesystem::remove_all(dir_b);
}

TEST_CASE("constrained campaign with an oracle model converges nowhere") {
    const auto dir = fresh_dir("oracle");
    auto c = small_config(dir);
    c.model_path = std::filesystem::path(ACPF_ADV_DATA_DIR).parent_path() / "configs" / "oracle_model.json";
    c.campaign.deltas = {0.04};
    const Run run(c);
    cmd_gen_data(run);
    const auto out = cmd_attack_con(run);
    CHECK(out.at("campaigns")[0].at("converged") == 0);
    CHECK(out.at("campaigns")[0].at("attempts") == 4);
    const auto v = cmd_verify(run, run.con_dir(0.04) / "results.jsonl");
    CHECK(v.at("checked") == 0);
    std::filesystem::remove_all(dir);
}

TEST_CASE("pf command") {
    const auto grid = case14();
    const auto nominal = cmd_pf(grid, std::nullopt);
    CHECK(nominal.at("converged") == true);
    CHECK(nominal.at("residual_norm").get<double>() <= 1e-8);

    const auto dir = fresh_dir("pf");
    std::filesystem::create_directories(dir);
    const auto x = bounded_nominal_input(grid).flat;
    std::ofstream(dir / "x.json") << nlohmann::json{{"x", std::vector<double>(x.data(), x.data() + x.size())}}.dump();
    const auto sol = cmd_pf(grid, dir / "x.json");
    CHECK(sol.at("converged") == true);
    CHECK(sol.at("x").get<std::vector<double>>() == std::vector<double>(x.data(), x.data() + x.size()));

    std::ofstream(dir / "short.json") << "[1.0, 2.0]";
    CHECK_THROWS_AS(cmd_pf(grid, dir / "short.json"), DimensionError);
    std::filesystem::remove_all(dir);
}
