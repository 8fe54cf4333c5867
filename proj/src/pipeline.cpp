#include "acpf_adv/pipeline.hpp"

#include <fstream>
#include <set>

#include <fmt/format.h>

#include "acpf_adv/errors.hpp"
#include "acpf_adv/hash.hpp"
#include "acpf_adv/log.hpp"

namespace acpf_adv {

namespace {

nlohmann::json parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
}

void require_file(const std::filesystem::path& path, const std::string& what) {
    if (!std::filesystem::is_regular_file(path)) throw ConfigError(fmt::format("{} not found: {}", what, path.string()));
}

std::vector<AttackResult> concat(std::vector<AttackResult> a, const std::vector<AttackResult>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

std::size_t count_converged(const std::vector<AttackResult>& rs) {
    std::size_t n = 0;
    for (const auto& r : rs) n += r.converged();
    return n;
}

nlohmann::json status_breakdown(const std::vector<AttackResult>& rs) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& r : rs) {
        const std::string s(to_string(r.status));
        j[s] = j.value(s, 0) + 1;
    }
    return j;
}

std::unique_ptr<Surrogate> load_model(const Run& run) {
    require_file(run.model_path(), "model file");
    return load_surrogate(run.model_path(), run.grid);
}

std::vector<TrainingSample> load_data(const Run& run) {
    require_file(run.data_path(), "dataset file");
    return load_dataset(run.data_path());
}

}  // namespace

nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json j{{"case", c.case_path.string()},
                     {"dataset_size", c.dataset_size},
                     {"sampling", to_json(c.sampling)},
                     {"train", to_json(c.train)},
                     {"solver", to_json(c.solver)},
                     {"campaign",
                      {{"buses", c.campaign.buses},
                       {"points", c.campaign.points},
                       {"deltas", c.campaign.deltas},
                       {"lower_bound", c.campaign.lower_bound},
                       {"histogram_bins", c.campaign.histogram_bins},
                       {"selected_per_l0", c.campaign.selected_per_l0}}},
                     {"out", c.out_dir.string()},
                     {"workers", c.workers},
                     {"model", c.model_path.string()},
                     {"data", c.data_path.string()}};
    j["seed"] = c.seed ? nlohmann::json(*c.seed) : nlohmann::json(nullptr);
    return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    static const std::set<std::string> known{"case",  "seed",     "dataset_size", "sampling", "train", "solver",
                                             "campaign", "out", "workers", "model", "data"};
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) throw ConfigError("unknown run config key \"" + key + "\"");
    try {
        RunConfig c;
        c.case_path = j.value("case", std::string());
        if (j.contains("seed") && !j.at("seed").is_null()) c.seed = j.at("seed").get<std::uint64_t>();
        c.dataset_size = j.value("dataset_size", c.dataset_size);
        if (j.contains("sampling")) c.sampling = sampling_config_from_json(j.at("sampling"));
        if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
        if (j.contains("solver")) c.solver = solver_config_from_json(j.at("solver"));
        if (j.contains("campaign")) {
            const auto& cj = j.at("campaign");
            auto& s = c.campaign;
            s.buses = cj.value("buses", s.buses);
            s.points = cj.value("points", s.points);
            s.deltas = cj.value("deltas", s.deltas);
            s.lower_bound = cj.value("lower_bound", s.lower_bound);
            s.histogram_bins = cj.value("histogram_bins", s.histogram_bins);
            s.selected_per_l0 = cj.value("selected_per_l0", s.selected_per_l0);
        }
        c.out_dir = j.value("out", c.out_dir.string());
        c.workers = j.value("workers", c.workers);
        c.model_path = j.value("model", std::string());
        c.data_path = j.value("data", std::string());
        if (c.dataset_size == 0) throw ConfigError("dataset_size must be positive");
        if (c.workers < 1) throw ConfigError("workers must be >= 1");
        if (c.campaign.deltas.empty()) throw ConfigError("campaign.deltas must not be empty");
        for (double d : c.campaign.deltas)
            if (!(d > 0.0)) throw ConfigError("campaign deltas must be positive");
        if (c.campaign.histogram_bins == 0) throw ConfigError("campaign.histogram_bins must be positive");
        for (int p : c.campaign.points)
            if (p < 0) throw ConfigError("campaign points must be non-negative");
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
}

RunConfig load_run_config(const std::filesystem::path& path) { return run_config_from_json(parse_file(path)); }

std::filesystem::path default_case_path() { return std::filesystem::path(ACPF_ADV_DATA_DIR) / "case14.m"; }

Run::Run(RunConfig c) : config(std::move(c)) {
    if (!config.seed) throw ConfigError("a seed is required (config \"seed\" or --seed)");
    seed = *config.seed;
    if (config.case_path.empty()) config.case_path = default_case_path();
    require_file(config.case_path, "case file");
    grid = load_case(config.case_path);
    // only result-affecting fields; the case enters through case_hash
    auto hashed = to_json(config);
    for (const char* k : {"case", "out", "workers", "model", "data"}) hashed.erase(k);
    config_hash = json_hash(hashed);
}

std::filesystem::path Run::model_path() const {
    return config.model_path.empty() ? config.out_dir / "model.json" : config.model_path;
}

std::filesystem::path Run::data_path() const {
    return config.data_path.empty() ? config.out_dir / "dataset.jsonl" : config.data_path;
}

std::filesystem::path Run::con_dir(double delta) const {
    return config.out_dir / fmt::format("con_delta_{}", delta);
}

TrainConfig Run::train_config() const {
    TrainConfig t = config.train;
    t.seed = seed;
    return t;
}

CampaignOptions Run::campaign_options(double delta) const {
    CampaignOptions o;
    o.solver = config.solver;
    o.workers = config.workers;
    o.lower_bound = config.campaign.lower_bound;
    o.delta = delta;
    return o;
}

nlohmann::json Run::provenance(const Surrogate* model) const {
    nlohmann::json p{{"case_name", grid.name}, {"case_hash", json_hash(to_json(grid))}, {"config_hash", config_hash}};
    if (model) p["model_hash"] = json_hash(model->to_json());
    return p;
}

std::vector<TrainingPoint> training_points(const DatasetSplit& split, const std::vector<int>& indices) {
    std::vector<TrainingPoint> out;
    for (int i : indices) {
        if (static_cast<std::size_t>(i) >= split.train.size())
            throw ConfigError(fmt::format("training point {} outside the {} training samples", i, split.train.size()));
        out.push_back({i, split.train[static_cast<std::size_t>(i)].x});
    }
    return out;
}

double mean_abs_error(const Surrogate& model, std::span<const TrainingSample> samples) {
    if (samples.empty()) throw ConfigError("mean absolute error of an empty set");
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& s : samples) {
        sum += (model.forward(s.x) - s.y).cwiseAbs().sum();
        n += static_cast<std::size_t>(s.y.size());
    }
    return sum / static_cast<double>(n);
}

nlohmann::json cmd_gen_data(const Run& run) {
    const auto data = gen_dataset(run.grid, run.config.dataset_size, run.config.sampling, run.seed);
    auto prov = run.provenance();
    prov["sampling"] = to_json(run.config.sampling);
    prov["seed"] = run.seed;
    std::filesystem::create_directories(run.data_path().parent_path().empty() ? "." : run.data_path().parent_path());
    save_dataset(data, run.data_path(), prov);
    return {{"command", "gen-data"}, {"samples", data.size()}, {"path", run.data_path().string()}};
}

nlohmann::json cmd_train(const Run& run) {
    const auto data = load_data(run);
    const auto cfg = run.train_config();
    const auto split = split_dataset(data, cfg);
    const auto result = train(run.grid, split.train, split.val, cfg);

    std::filesystem::create_directories(run.model_path().parent_path().empty() ? "." : run.model_path().parent_path());
    save_surrogate(result.model, run.model_path());
    std::string log_csv = "# provenance: " + run.provenance(&result.model).dump() + "\n";
    log_csv += "epoch,train_mse,train_cv,val_mse,val_cv\n";
    for (const auto& e : result.log)
        log_csv += fmt::format("{},{},{},{},{}\n", e.epoch, e.train_mse, e.train_cv, e.val_mse, e.val_cv);
    write_text(run.config.out_dir / "train_log.csv", log_csv);

    nlohmann::json out{{"command", "train"},
                       {"path", run.model_path().string()},
                       {"n_train", split.train.size()},
                       {"train_mse", loss_mse(result.model, split.train)}};
    if (!split.test.empty()) {
        out["test_mse"] = loss_mse(result.model, split.test);
        out["test_mae"] = mean_abs_error(result.model, split.test);
    }
    return out;
}

nlohmann::json cmd_attack_max(const Run& run) {
    const auto model = load_model(run);
    const auto results = run_max_error_campaign(run.grid, *model, run.campaign_options(run.config.campaign.deltas.front()));
    const auto prov = run.provenance(model.get());
    std::filesystem::create_directories(run.max_dir());
    save_results(results, run.max_dir() / "results.jsonl", prov);
    write_table(make_table(per_bus_max_error(results)), run.max_dir(), prov);

    double worst = 0.0;
    std::string worst_key;
    for (const auto& r : results)
        if (r.converged() && std::abs(r.error) > worst) {
            worst = std::abs(r.error);
            worst_key = r.key;
        }
    return {{"command", "attack-max"},  {"attempts", results.size()},    {"converged", count_converged(results)},
            {"status", status_breakdown(results)}, {"max_abs_error", worst}, {"max_abs_error_key", worst_key},
            {"dir", run.max_dir().string()}};
}

nlohmann::json cmd_attack_con(const Run& run) {
    const auto model = load_model(run);
    const auto split = split_dataset(load_data(run), run.train_config());
    const auto points = training_points(split, run.config.campaign.points);
    const auto buses = run.config.campaign.buses.empty() ? pq_bus_ids(run.grid) : run.config.campaign.buses;
    const PfLayout layout(run.grid);
    const auto prov = run.provenance(model.get());

    nlohmann::json per_delta = nlohmann::json::array();
    for (double delta : run.config.campaign.deltas) {
        const auto results = run_constrained_campaign(run.grid, *model, points, buses, run.campaign_options(delta));
        const auto dir = run.con_dir(delta);
        std::filesystem::create_directories(dir);
        save_results(results, dir / "results.jsonl", prov);
        write_table(make_table(perturbation_summary(results)), dir, prov);
        write_table(make_table(selected_cases(results, layout, run.config.campaign.selected_per_l0)), dir, prov);
        write_table(make_table(l1_histogram(results, run.config.campaign.histogram_bins)), dir, prov);
        per_delta.push_back({{"delta", delta},
                             {"attempts", results.size()},
                             {"converged", count_converged(results)},
                             {"status", status_breakdown(results)},
                             {"dir", dir.string()}});
    }
    return {{"command", "attack-con"}, {"campaigns", per_delta}};
}

nlohmann::json cmd_eval(const Run& run) {
    const auto model = load_model(run);
    const auto split = split_dataset(load_data(run), run.train_config());
    auto points = [](const std::vector<TrainingSample>& s) {
        std::vector<Vector> out;
        for (const auto& t : s) out.push_back(t.x);
        return out;
    };
    std::vector<LabeledPoints> sets{{"Train", points(split.train)}};
    if (!split.test.empty()) sets.push_back({"Test", points(split.test)});

    std::vector<AttackResult> adversarial;
    if (std::filesystem::exists(run.max_dir() / "results.jsonl"))
        adversarial = load_results(run.max_dir() / "results.jsonl").results;
    for (double delta : run.config.campaign.deltas)
        if (std::filesystem::exists(run.con_dir(delta) / "results.jsonl"))
            adversarial = concat(std::move(adversarial), load_results(run.con_dir(delta) / "results.jsonl").results);
    auto adv_points = adversarial_points(adversarial);
    if (adv_points.empty())
        log().warn("no converged adversarial results under {}; the Adversarial row is omitted",
                   run.config.out_dir.string());
    else
        sets.push_back({"Adversarial", std::move(adv_points)});

    const auto rows = loss_table(run.grid, *model, sets);
    const auto prov = run.provenance(model.get());
    write_table(make_table(rows), run.eval_dir(), prov);
    nlohmann::json out{{"command", "eval"}, {"dir", run.eval_dir().string()}, {"rows", nlohmann::json::array()}};
    for (const auto& r : rows)
        out["rows"].push_back({{"dataset", r.label},
                               {"n_points", r.count},
                               {"mse_mean", r.mse_mean},
                               {"pbl_mean", r.pbl_mean},
                               {"pbl_min", r.pbl_min}});
    return out;
}

nlohmann::json cmd_verify(const Run& run, const std::filesystem::path& results_path) {
    require_file(results_path, "results file");
    const auto model = load_model(run);
    const auto file = load_results(results_path);
    const auto expected = json_hash(model->to_json());
    if (file.provenance.contains("model_hash") && file.provenance.at("model_hash") != expected)
        log().warn("results were produced by model {}, verifying against {}",
                   file.provenance.at("model_hash").get<std::string>(), expected);
    nlohmann::json issues = nlohmann::json::array();
    std::size_t checked = 0, suspect = 0;
    for (const auto& r : file.results) {
        if (!r.converged()) continue;
        ++checked;
        const auto v = verify_result(run.grid, *model, r);
        suspect += v.suspect_branch;
        if (!v.consistent) issues.push_back({{"key", r.key}, {"issues", v.issues}});
    }
    return {{"command", "verify"},         {"path", results_path.string()}, {"results", file.results.size()},
            {"checked", checked},          {"inconsistent", issues.size()}, {"suspect_branch", suspect},
            {"issues", issues}};
}

nlohmann::json cmd_pf(const GridCase& grid, const std::optional<std::filesystem::path>& inputs_path) {
    PfInput x = nominal_input(grid);
    if (inputs_path) {
        const auto j = parse_file(*inputs_path);
        const auto& arr = j.is_object() ? j.at("x") : j;
        const auto v = arr.get<std::vector<double>>();
        const PfLayout layout(grid);
        if (v.size() != layout.n_in())
            throw DimensionError(fmt::format("inputs have {} entries, the case needs {}", v.size(), layout.n_in()));
        x.flat = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    const auto sol = solve_pf(grid, x);
    auto out = to_json(sol);
    out["case_name"] = grid.name;
    out["x"] = std::vector<double>(x.flat.data(), x.flat.data() + x.flat.size());
    return out;
}

}  // namespace acpf_adv
