#include <fstream>
#include <random>

#include "acpf_adv/log.hpp"
#include "acpf_adv/surrogate.hpp"

namespace acpf_adv {

namespace {
using Idx = Eigen::Index;
}

nlohmann::json to_json(const SamplingConfig& c) {
    return {{"load_spread", c.load_spread},
            {"sample_pv_v", c.sample_pv_v},
            {"sample_pv_p", c.sample_pv_p},
            {"max_attempts_per_sample", c.max_attempts_per_sample}};
}

SamplingConfig sampling_config_from_json(const nlohmann::json& j) {
    SamplingConfig c;
    c.load_spread = j.value("load_spread", c.load_spread);
    c.sample_pv_v = j.value("sample_pv_v", c.sample_pv_v);
    c.sample_pv_p = j.value("sample_pv_p", c.sample_pv_p);
    c.max_attempts_per_sample = j.value("max_attempts_per_sample", c.max_attempts_per_sample);
    if (c.load_spread < 0.0 || c.load_spread >= 1.0) throw ConfigError("load_spread must lie in [0, 1)");
    if (c.max_attempts_per_sample < 1) throw ConfigError("max_attempts_per_sample must be >= 1");
    return c;
}

PfInput bounded_nominal_input(const GridCase& grid) {
    return PfInput{input_bounds(grid).project(nominal_input(grid).flat)};
}

std::vector<TrainingSample> gen_dataset(const GridCase& grid, std::size_t n, const SamplingConfig& sampling,
                                        std::uint64_t seed) {
    if (n == 0) throw ConfigError("dataset size must be at least 1");
    const PowerFlow pf(grid);
    const auto& layout = pf.layout();
    const auto bounds = input_bounds(grid);
    const PfInput base = bounded_nominal_input(grid);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::vector<TrainingSample> out;
    out.reserve(n);
    std::size_t attempts = 0;
    std::size_t rejected = 0;
    const std::size_t max_attempts = n * static_cast<std::size_t>(sampling.max_attempts_per_sample);
    while (out.size() < n) {
        if (attempts >= max_attempts) {
            throw ConfigError("sampling exhausted " + std::to_string(attempts) + " attempts for " +
                              std::to_string(n) + " samples");
        }
        if (attempts >= 20 && rejected * 10 > attempts * 9) {
            throw ConfigError("power flow rejection rate above 90% (" + std::to_string(rejected) + " of " +
                              std::to_string(attempts) + "); sampling ranges are too wide");
        }
        ++attempts;
        PfInput x = base;
        for (std::size_t i = 0; i < layout.n_in(); ++i) {
            const auto k = static_cast<Idx>(i);
            const auto& c = layout.inputs()[i];
            // draw every coordinate so the stream does not depend on the switches
            const double u = unit(rng);
            switch (c.kind) {
                case BusKind::PQ:
                    x.flat[k] = base.flat[k] * (1.0 + sampling.load_spread * (2.0 * u - 1.0));
                    break;
                case BusKind::PV: {
                    const bool on = c.quantity == Quantity::v_mag ? sampling.sample_pv_v : sampling.sample_pv_p;
                    if (on) x.flat[k] = bounds.lower[k] + (bounds.upper[k] - bounds.lower[k]) * u;
                    break;
                }
                case BusKind::REF: break;
            }
        }
        auto sol = pf.solve(x);
        if (!sol.converged) {
            ++rejected;
            log().debug("sample {} rejected: {}", attempts, sol.diagnostic);
            continue;
        }
        out.push_back({std::move(x.flat), std::move(sol.output.flat), sol.residual_norm});
    }
    log().info("generated {} samples ({} rejected)", n, rejected);
    return out;
}

void save_dataset(const std::vector<TrainingSample>& data, const std::filesystem::path& path,
                  const nlohmann::json& provenance) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    if (!provenance.is_null()) out << nlohmann::json{{"provenance", provenance}}.dump() << '\n';
    for (const auto& s : data) {
        out << nlohmann::json{{"x", std::vector<double>(s.x.data(), s.x.data() + s.x.size())},
                              {"y", std::vector<double>(s.y.data(), s.y.data() + s.y.size())},
                              {"residual_norm", s.residual_norm}}
                   .dump()
            << '\n';
    }
}

std::vector<TrainingSample> load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open dataset " + path.string());
    std::vector<TrainingSample> data;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            if (j.contains("provenance")) continue;
            const auto x = j.at("x").get<std::vector<double>>();
            const auto y = j.at("y").get<std::vector<double>>();
            data.push_back({Eigen::Map<const Vector>(x.data(), static_cast<Idx>(x.size())),
                            Eigen::Map<const Vector>(y.data(), static_cast<Idx>(y.size())),
                            j.at("residual_norm").get<double>()});
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(line_no, std::string("dataset: ") + e.what());
        }
    }
    return data;
}

}  // namespace acpf_adv
