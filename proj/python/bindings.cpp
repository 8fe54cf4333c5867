#include <memory>
#include <optional>
#include <string>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "acpf_adv/errors.hpp"
#include "acpf_adv/pipeline.hpp"

namespace py = pybind11;
using namespace acpf_adv;

namespace {

std::vector<std::string> names(const std::vector<Coord>& coords) {
    std::vector<std::string> out;
    for (const auto& c : coords) out.push_back(c.name());
    return out;
}

struct Model {
    std::shared_ptr<const Surrogate> impl;
};

AttackMode mode_of(const std::string& s) { return attack_mode_from_string(s); }

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Adversarial testing of neural AC power flow surrogates (C++ core)";

    // translators registered later are tried first, so derived types follow the base
    const auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ParseError>(m, "ParseError", base);
    py::register_exception<ValidationError>(m, "ValidationError", base);
    py::register_exception<DimensionError>(m, "DimensionError", base);
    py::register_exception<NumericError>(m, "NumericError", base);
    py::register_exception<ConfigError>(m, "ConfigError", base);

    m.def("builtin_case_path", [] { return default_case_path(); }, "Case path compiled into the library");

    py::class_<GridCase>(m, "Grid")
        .def(py::init([](const std::filesystem::path& path) { return load_case(path); }), py::arg("path"))
        .def_static("from_text", [](const std::string& text, const std::string& name) { return parse_matpower(text, name); },
                    py::arg("text"), py::arg("name") = "case")
        .def_property_readonly("name", [](const GridCase& g) { return g.name; })
        .def_property_readonly("n_bus", [](const GridCase& g) { return g.n_bus(); })
        .def_property_readonly("input_names", [](const GridCase& g) { return names(PfLayout(g).inputs()); })
        .def_property_readonly("output_names", [](const GridCase& g) { return names(PfLayout(g).outputs()); })
        .def("input_index", [](const GridCase& g, int bus, const std::string& q) {
            return PfLayout(g).input_index(bus, quantity_from_string(q));
        })
        .def("output_index", [](const GridCase& g, int bus, const std::string& q) {
            return PfLayout(g).output_index(bus, quantity_from_string(q));
        })
        .def("nominal_input", [](const GridCase& g) { return nominal_input(g).flat; })
        .def("bounded_nominal_input", [](const GridCase& g) { return bounded_nominal_input(g).flat; })
        .def("input_bounds", [](const GridCase& g) {
            const auto b = input_bounds(g);
            return py::make_tuple(b.lower, b.upper);
        })
        .def("pq_bus_ids", [](const GridCase& g) { return pq_bus_ids(g); })
        .def("to_json", [](const GridCase& g) { return to_json(g).dump(); });

    m.def(
        "solve_pf",
        [](const GridCase& g, const Vector& x, std::optional<Vector> init) {
            return to_json(solve_pf(g, PfInput{x}, init)).dump();
        },
        py::arg("grid"), py::arg("x"), py::arg("init") = std::nullopt, "PfSolution as JSON text");
    m.def(
        "pf_output_jacobian",
        [](const GridCase& g, const Vector& x) {
            const auto sol = solve_pf(g, PfInput{x});
            return pf_output_jacobian(g, sol, PfInput{x});
        },
        py::arg("grid"), py::arg("x"));

    py::class_<Model>(m, "Model")
        .def_static("load", [](const std::filesystem::path& p, const GridCase& g) {
            return Model{std::shared_ptr<const Surrogate>(load_surrogate(p, g))};
        })
        .def_static("from_json", [](const std::string& text, const GridCase& g) {
            return Model{std::shared_ptr<const Surrogate>(surrogate_from_json(nlohmann::json::parse(text), g))};
        })
        .def_static("oracle", [](const GridCase& g) { return Model{make_oracle_surrogate(g)}; })
        .def_static("biased_oracle", [](const GridCase& g, std::size_t coord, double bias) {
            return Model{make_biased_oracle(g, coord, bias)};
        })
        .def_property_readonly("kind", [](const Model& mdl) { return mdl.impl->kind(); })
        .def("forward", [](const Model& mdl, const Vector& x) { return mdl.impl->forward(x); })
        .def("jacobian", [](const Model& mdl, const Vector& x) { return mdl.impl->jacobian(x); })
        .def("save", [](const Model& mdl, const std::filesystem::path& p) { save_surrogate(*mdl.impl, p); })
        .def("to_json", [](const Model& mdl) { return mdl.impl->to_json().dump(); });

    m.def(
        "gen_dataset",
        [](const GridCase& g, std::size_t n, std::uint64_t seed, const std::string& sampling) {
            const auto data = gen_dataset(g, n, sampling_config_from_json(nlohmann::json::parse(sampling)), seed);
            Matrix xs(static_cast<Eigen::Index>(n), data.empty() ? 0 : data[0].x.size());
            Matrix ys(static_cast<Eigen::Index>(n), data.empty() ? 0 : data[0].y.size());
            for (std::size_t i = 0; i < data.size(); ++i) {
                xs.row(static_cast<Eigen::Index>(i)) = data[i].x.transpose();
                ys.row(static_cast<Eigen::Index>(i)) = data[i].y.transpose();
            }
            return py::make_tuple(xs, ys);
        },
        py::arg("grid"), py::arg("n"), py::arg("seed"), py::arg("sampling") = "{}");

    m.def(
        "train",
        [](const GridCase& g, const Matrix& xs, const Matrix& ys, const std::string& config) {
            if (xs.rows() != ys.rows()) throw DimensionError("x and y need the same number of rows");
            std::vector<TrainingSample> data;
            for (Eigen::Index i = 0; i < xs.rows(); ++i) data.push_back({xs.row(i).transpose(), ys.row(i).transpose()});
            const auto cfg = train_config_from_json(nlohmann::json::parse(config));
            py::gil_scoped_release release;
            auto result = train(g, data, {}, cfg);
            return Model{std::make_shared<MlpModel>(std::move(result.model))};
        },
        py::arg("grid"), py::arg("x"), py::arg("y"), py::arg("config") = "{}");

    m.def(
        "run_max_error",
        [](const GridCase& g, const Model& mdl, int bus_id, const std::string& quantity, const std::string& mode,
           const std::string& solver) {
            const auto spec = AttackSpec::max_error(g, bus_id, quantity_from_string(quantity), mode_of(mode));
            return to_json(run_attack(g, *mdl.impl, spec, solver_config_from_json(nlohmann::json::parse(solver)))).dump();
        },
        py::arg("grid"), py::arg("model"), py::arg("bus_id"), py::arg("quantity"), py::arg("mode") = "max_error",
        py::arg("solver") = "{}");
    m.def(
        "run_constrained",
        [](const GridCase& g, const Model& mdl, int bus_id, const Vector& x0, double lower_bound, double delta,
           const std::string& solver) {
            const auto spec = AttackSpec::constrained(g, bus_id, x0, lower_bound, delta);
            return to_json(run_attack(g, *mdl.impl, spec, solver_config_from_json(nlohmann::json::parse(solver)))).dump();
        },
        py::arg("grid"), py::arg("model"), py::arg("bus_id"), py::arg("x0"), py::arg("lower_bound") = 0.94,
        py::arg("delta") = 0.04, py::arg("solver") = "{}");
    m.def(
        "max_error_campaign",
        [](const GridCase& g, const Model& mdl, int workers) {
            CampaignOptions opt;
            opt.workers = workers;
            std::vector<AttackResult> rs;
            {
                py::gil_scoped_release release;
                rs = run_max_error_campaign(g, *mdl.impl, opt);
            }
            nlohmann::json out = nlohmann::json::array();
            for (const auto& r : rs) out.push_back(to_json(r));
            return out.dump();
        },
        py::arg("grid"), py::arg("model"), py::arg("workers") = 1);
    m.def(
        "verify_result",
        [](const GridCase& g, const Model& mdl, const std::string& result) {
            const auto v = verify_result(g, *mdl.impl, attack_result_from_json(nlohmann::json::parse(result)));
            return nlohmann::json{{"consistent", v.consistent}, {"issues", v.issues},  {"error", v.error},
                                  {"y_nn", v.y_nn},             {"y_pf", v.y_pf},      {"suspect_branch", v.suspect_branch}}
                .dump();
        },
        py::arg("grid"), py::arg("model"), py::arg("result"));

    m.def(
        "run_command",
        [](const std::string& command, const std::string& config, std::optional<std::filesystem::path> path) {
            nlohmann::json out;
            py::gil_scoped_release release;
            if (command == "pf") {
                const auto cfg = run_config_from_json(nlohmann::json::parse(config));
                const auto grid = load_case(cfg.case_path.empty() ? default_case_path() : cfg.case_path);
                return cmd_pf(grid, path).dump();
            }
            const Run run(run_config_from_json(nlohmann::json::parse(config)));
            if (command == "gen-data") out = cmd_gen_data(run);
            else if (command == "train") out = cmd_train(run);
            else if (command == "attack-max") out = cmd_attack_max(run);
            else if (command == "attack-con") out = cmd_attack_con(run);
            else if (command == "eval") out = cmd_eval(run);
            else if (command == "verify") {
                if (!path) throw ConfigError("verify needs a results file");
                out = cmd_verify(run, *path);
            } else {
                throw ConfigError("unknown command \"" + command + "\"");
            }
            return out.dump();
        },
        py::arg("command"), py::arg("config"), py::arg("path") = std::nullopt);
}
