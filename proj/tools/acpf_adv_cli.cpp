#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "acpf_adv/errors.hpp"
#include "acpf_adv/pipeline.hpp"

using namespace acpf_adv;

namespace {

struct Flags {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::string case_path;
    std::string model;
    std::string data;
};

void add_common(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "Run config JSON file")->check(CLI::ExistingFile);
    cmd->add_option("--out", f.out, "Output directory");
    cmd->add_option("--seed", f.seed, "Random seed");
    cmd->add_option("--workers", f.workers, "Concurrent attack workers");
    cmd->add_option("--case", f.case_path, "MATPOWER case file");
}

void add_artifacts(CLI::App* cmd, Flags& f) {
    cmd->add_option("--model", f.model, "Model file (default <out>/model.json)");
    cmd->add_option("--data", f.data, "Dataset file (default <out>/dataset.jsonl)");
}

Run make_run(const Flags& f) {
    RunConfig c = f.config.empty() ? RunConfig{} : load_run_config(f.config);
    if (!f.out.empty()) c.out_dir = f.out;
    if (f.seed) c.seed = f.seed;
    if (f.workers) c.workers = *f.workers;
    if (!f.case_path.empty()) c.case_path = f.case_path;
    if (!f.model.empty()) c.model_path = f.model;
    if (!f.data.empty()) c.data_path = f.data;
    if (c.workers < 1) throw ConfigError("workers must be >= 1");
    return Run(std::move(c));
}

int fail(const std::string& kind, const std::string& message, int code) {
    std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << std::endl;
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adversarial testing of neural AC power flow surrogates"};
    app.require_subcommand(1);
    Flags f;
    std::string results_path, inputs_path;

    auto* gen = app.add_subcommand("gen-data", "Generate a power flow dataset");
    add_common(gen, f);
    add_artifacts(gen, f);
    auto* tr = app.add_subcommand("train", "Train the MLP surrogate");
    add_common(tr, f);
    add_artifacts(tr, f);
    auto* amax = app.add_subcommand("attack-max", "Max/min-error campaign over all buses");
    add_common(amax, f);
    add_artifacts(amax, f);
    auto* acon = app.add_subcommand("attack-con", "Constrained-error campaign over training points and PQ buses");
    add_common(acon, f);
    add_artifacts(acon, f);
    auto* ev = app.add_subcommand("eval", "Loss table over train, test and adversarial points");
    add_common(ev, f);
    add_artifacts(ev, f);
    auto* ver = app.add_subcommand("verify", "Re-verify the converged results of a results file");
    add_common(ver, f);
    add_artifacts(ver, f);
    ver->add_option("results", results_path, "Results JSON-lines file")->required();
    auto* pf = app.add_subcommand("pf", "Solve the power flow at given inputs");
    pf->add_option("--case", f.case_path, "MATPOWER case file");
    pf->add_option("--inputs", inputs_path, "JSON array or {\"x\": [...]} of flat inputs")->check(CLI::ExistingFile);
    pf->add_option("--out", f.out, "Directory for pf_solution.json (default stdout only)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage_error", e.what(), 2);
    }

    try {
        nlohmann::json out;
        int code = 0;
        if (pf->parsed()) {
            const auto grid = load_case(f.case_path.empty() ? default_case_path() : std::filesystem::path(f.case_path));
            out = cmd_pf(grid, inputs_path.empty() ? std::nullopt : std::optional<std::filesystem::path>(inputs_path));
            if (!f.out.empty()) {
                std::filesystem::create_directories(f.out);
                std::ofstream(std::filesystem::path(f.out) / "pf_solution.json") << out.dump(2) << '\n';
            }
        } else {
            const Run run = make_run(f);
            if (gen->parsed()) out = cmd_gen_data(run);
            if (tr->parsed()) out = cmd_train(run);
            if (amax->parsed()) out = cmd_attack_max(run);
            if (acon->parsed()) out = cmd_attack_con(run);
            if (ev->parsed()) out = cmd_eval(run);
            if (ver->parsed()) {
                out = cmd_verify(run, results_path);
                if (out.at("inconsistent").get<std::size_t>() > 0) code = 3;
            }
        }
        std::cout << out.dump(2) << std::endl;
        return code;
    } catch (const Error& e) {
        return fail(e.kind(), e.what(), 1);
    } catch (const std::exception& e) {
        return fail("internal_error", e.what(), 1);
    }
}
