#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "acpf_adv/report.hpp"

namespace acpf_adv {

struct CampaignSelection {
    std::vector<int> buses;         // constrained targets; empty means every PQ bus
    std::vector<int> points = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};  // indices into the training split
    std::vector<double> deltas = {0.04};
    double lower_bound = 0.94;
    std::size_t histogram_bins = 10;
    std::size_t selected_per_l0 = 1;
};

struct RunConfig {
    std::filesystem::path case_path;  // empty means the bundled 14-bus case
    std::optional<std::uint64_t> seed;
    std::size_t dataset_size = 1000;
    SamplingConfig sampling;
    TrainConfig train;
    SolverConfig solver;
    CampaignSelection campaign;
    std::filesystem::path out_dir = "out";
    int workers = 1;
    std::filesystem::path model_path;  // empty means <out>/model.json
    std::filesystem::path data_path;   // empty means <out>/dataset.jsonl
};

nlohmann::json to_json(const RunConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Path of the bundled case used when none is configured.
std::filesystem::path default_case_path();

/// Resolved view of a config: seed present, case readable, derived paths.
struct Run {
    RunConfig config;
    GridCase grid;
    std::uint64_t seed = 0;
    std::string config_hash;

    explicit Run(RunConfig c);
    std::filesystem::path model_path() const;
    std::filesystem::path data_path() const;
    std::filesystem::path max_dir() const { return config.out_dir / "max"; }
    std::filesystem::path con_dir(double delta) const;
    std::filesystem::path eval_dir() const { return config.out_dir / "eval"; }
    TrainConfig train_config() const;
    CampaignOptions campaign_options(double delta) const;
    nlohmann::json provenance(const Surrogate* model = nullptr) const;
};

/// Each command writes its files under the output directory and returns a
/// JSON summary for stdout.
nlohmann::json cmd_gen_data(const Run& run);
nlohmann::json cmd_train(const Run& run);
nlohmann::json cmd_attack_max(const Run& run);
nlohmann::json cmd_attack_con(const Run& run);
nlohmann::json cmd_eval(const Run& run);
/// Re-verifies every converged result in the file; "inconsistent" counts failures.
nlohmann::json cmd_verify(const Run& run, const std::filesystem::path& results_path);
/// Solves the case at the given flat inputs (nominal inputs when empty).
nlohmann::json cmd_pf(const GridCase& grid, const std::optional<std::filesystem::path>& inputs_path);

/// Mean over samples and coordinates of |y_NN - y|, in per-unit.
double mean_abs_error(const Surrogate& model, std::span<const TrainingSample> samples);

/// Training points of a run: the configured indices into the training split.
std::vector<TrainingPoint> training_points(const DatasetSplit& split, const std::vector<int>& indices);

}  // namespace acpf_adv
