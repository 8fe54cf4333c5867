#include "acpf_adv/surrogate.hpp"

#include <cmath>
#include <fstream>
#include <random>

namespace acpf_adv {

namespace {
using Idx = Eigen::Index;

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector from_std(const std::vector<double>& v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Idx>(v.size()));
}

Vector apply(Activation a, const Vector& pre) {
    switch (a) {
        case Activation::identity: return pre;
        case Activation::tanh: return pre.array().tanh();
        case Activation::relu: return pre.cwiseMax(0.0);
    }
    return pre;
}

// derivative expressed through the pre-activation
Vector derivative(Activation a, const Vector& pre) {
    switch (a) {
        case Activation::identity: return Vector::Ones(pre.size());
        case Activation::tanh: return 1.0 - pre.array().tanh().square();
        case Activation::relu: return (pre.array() > 0.0).cast<double>();
    }
    return Vector::Ones(pre.size());
}

}  // namespace

std::string_view to_string(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::tanh: return "tanh";
        case Activation::relu: return "relu";
    }
    return "?";
}

Activation activation_from_string(std::string_view text) {
    if (text == "identity") return Activation::identity;
    if (text == "tanh") return Activation::tanh;
    if (text == "relu") return Activation::relu;
    throw ValidationError("unknown activation '" + std::string(text) + "'");
}

MlpModel::MlpModel(std::vector<DenseLayer> layers, Vector in_mean, Vector in_std, Vector out_mean, Vector out_std,
                   nlohmann::json metadata)
    : layers_(std::move(layers)), metadata_(std::move(metadata)) {
    if (layers_.empty()) throw ValidationError("MLP needs at least one layer");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& layer = layers_[l];
        if (layer.bias.size() != layer.weight.rows()) throw DimensionError("bias size does not match layer width");
        if (l > 0 && layer.weight.cols() != layers_[l - 1].weight.rows())
            throw DimensionError("layer " + std::to_string(l) + " input width mismatch");
    }
    set_normalization(std::move(in_mean), std::move(in_std), std::move(out_mean), std::move(out_std));
}

void MlpModel::set_normalization(Vector in_mean, Vector in_std, Vector out_mean, Vector out_std) {
    const auto n_in = layers_.front().weight.cols();
    const auto n_out = layers_.back().weight.rows();
    if (in_mean.size() != n_in || in_std.size() != n_in || out_mean.size() != n_out || out_std.size() != n_out)
        throw DimensionError("normalization statistics do not match the network shape");
    if ((in_std.array() <= 0.0).any() || (out_std.array() <= 0.0).any())
        throw ValidationError("normalization std must be positive");
    in_mean_ = std::move(in_mean);
    in_std_ = std::move(in_std);
    out_mean_ = std::move(out_mean);
    out_std_ = std::move(out_std);
}

MlpModel MlpModel::initialize(std::span<const std::size_t> sizes, Activation hidden, std::uint64_t seed) {
    if (sizes.size() < 2) throw ValidationError("need at least input and output sizes");
    std::mt19937_64 rng(seed);
    std::vector<DenseLayer> layers;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        const auto fan_in = static_cast<Idx>(sizes[l]);
        const auto fan_out = static_cast<Idx>(sizes[l + 1]);
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-limit, limit);
        DenseLayer layer;
        layer.weight.resize(fan_out, fan_in);
        for (Idx r = 0; r < fan_out; ++r)
            for (Idx c = 0; c < fan_in; ++c) layer.weight(r, c) = dist(rng);
        layer.bias = Vector::Zero(fan_out);
        layer.activation = l + 2 == sizes.size() ? Activation::identity : hidden;
        layers.push_back(std::move(layer));
    }
    const auto n_in = static_cast<Idx>(sizes.front());
    const auto n_out = static_cast<Idx>(sizes.back());
    return MlpModel(std::move(layers), Vector::Zero(n_in), Vector::Ones(n_in), Vector::Zero(n_out),
                    Vector::Ones(n_out));
}

std::size_t MlpModel::input_dim() const { return static_cast<std::size_t>(layers_.front().weight.cols()); }
std::size_t MlpModel::output_dim() const { return static_cast<std::size_t>(layers_.back().weight.rows()); }

void MlpModel::check_input(const Vector& x) const {
    if (static_cast<std::size_t>(x.size()) != input_dim())
        throw DimensionError("surrogate input has " + std::to_string(x.size()) + " entries, expected " +
                             std::to_string(input_dim()));
    if (!x.allFinite()) throw NumericError("non-finite surrogate input");
}

Vector MlpModel::forward_normalized(const Vector& z) const {
    Vector h = z;
    for (const auto& layer : layers_) h = apply(layer.activation, layer.weight * h + layer.bias);
    return h;
}

Vector MlpModel::forward(const Vector& x) const {
    check_input(x);
    const Vector z = (x - in_mean_).cwiseQuotient(in_std_);
    return out_mean_ + out_std_.cwiseProduct(forward_normalized(z));
}

Matrix MlpModel::jacobian(const Vector& x) const {
    check_input(x);
    Vector h = (x - in_mean_).cwiseQuotient(in_std_);
    Matrix m = in_std_.cwiseInverse().asDiagonal();
    for (const auto& layer : layers_) {
        const Vector pre = layer.weight * h + layer.bias;
        m = layer.weight * m;
        if (layer.activation != Activation::identity) m = derivative(layer.activation, pre).asDiagonal() * m;
        h = apply(layer.activation, pre);
    }
    return out_std_.asDiagonal() * m;
}

nlohmann::json MlpModel::to_json() const {
    std::vector<std::size_t> sizes{input_dim()};
    nlohmann::json activations = nlohmann::json::array();
    nlohmann::json weights = nlohmann::json::array();
    nlohmann::json biases = nlohmann::json::array();
    for (const auto& layer : layers_) {
        sizes.push_back(static_cast<std::size_t>(layer.weight.rows()));
        activations.push_back(to_string(layer.activation));
        std::vector<double> row_major;
        row_major.reserve(static_cast<std::size_t>(layer.weight.size()));
        for (Idx r = 0; r < layer.weight.rows(); ++r)
            for (Idx c = 0; c < layer.weight.cols(); ++c) row_major.push_back(layer.weight(r, c));
        weights.push_back(std::move(row_major));
        biases.push_back(to_std(layer.bias));
    }
    return {{"kind", "mlp"},
            {"layer_sizes", sizes},
            {"activations", activations},
            {"weights", weights},
            {"biases", biases},
            {"input_mean", to_std(in_mean_)},
            {"input_std", to_std(in_std_)},
            {"output_mean", to_std(out_mean_)},
            {"output_std", to_std(out_std_)},
            {"metadata", metadata_}};
}

MlpModel MlpModel::from_json(const nlohmann::json& j) {
    try {
        const auto sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
        const auto& acts = j.at("activations");
        const auto& weights = j.at("weights");
        const auto& biases = j.at("biases");
        if (sizes.size() < 2 || acts.size() + 1 != sizes.size() || weights.size() + 1 != sizes.size() ||
            biases.size() + 1 != sizes.size())
            throw ValidationError("inconsistent layer counts in model file");
        std::vector<DenseLayer> layers;
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
            DenseLayer layer;
            const auto rows = static_cast<Idx>(sizes[l + 1]);
            const auto cols = static_cast<Idx>(sizes[l]);
            const auto w = weights[l].get<std::vector<double>>();
            if (w.size() != static_cast<std::size_t>(rows * cols)) throw DimensionError("weight array size mismatch");
            layer.weight.resize(rows, cols);
            for (Idx r = 0; r < rows; ++r)
                for (Idx c = 0; c < cols; ++c) layer.weight(r, c) = w[static_cast<std::size_t>(r * cols + c)];
            layer.bias = from_std(biases[l].get<std::vector<double>>());
            layer.activation = activation_from_string(acts[l].get<std::string>());
            layers.push_back(std::move(layer));
        }
        return MlpModel(std::move(layers), from_std(j.at("input_mean").get<std::vector<double>>()),
                        from_std(j.at("input_std").get<std::vector<double>>()),
                        from_std(j.at("output_mean").get<std::vector<double>>()),
                        from_std(j.at("output_std").get<std::vector<double>>()),
                        j.value("metadata", nlohmann::json::object()));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed model file: ") + e.what());
    }
}

PfSolution OracleSurrogate::solve(const Vector& x) const {
    if (static_cast<std::size_t>(x.size()) != input_dim()) throw DimensionError("oracle input has wrong size");
    auto sol = pf_.solve(PfInput{x});
    if (!sol.converged) throw NumericError("oracle surrogate: power flow did not converge (" + sol.diagnostic + ")");
    return sol;
}

Vector OracleSurrogate::forward(const Vector& x) const { return solve(x).output.flat; }

Matrix OracleSurrogate::jacobian(const Vector& x) const {
    const auto sol = solve(x);
    return pf_.output_jacobian(sol, PfInput{x});
}

BiasedOracle::BiasedOracle(const GridCase& grid, std::size_t coord, double bias)
    : OracleSurrogate(grid), coord_(coord), bias_(bias) {
    if (coord_ >= output_dim()) throw DimensionError("biased oracle coordinate out of range");
}

Vector BiasedOracle::forward(const Vector& x) const {
    Vector y = OracleSurrogate::forward(x);
    y[static_cast<Idx>(coord_)] += bias_;
    return y;
}

std::unique_ptr<Surrogate> make_oracle_surrogate(const GridCase& grid) {
    return std::make_unique<OracleSurrogate>(grid);
}

std::unique_ptr<Surrogate> make_biased_oracle(const GridCase& grid, std::size_t coord, double bias) {
    return std::make_unique<BiasedOracle>(grid, coord, bias);
}

std::unique_ptr<Surrogate> surrogate_from_json(const nlohmann::json& j, const GridCase& grid) {
    const auto kind = j.value("kind", std::string("mlp"));
    std::unique_ptr<Surrogate> model;
    if (kind == "mlp") {
        model = std::make_unique<MlpModel>(MlpModel::from_json(j));
    } else if (kind == "oracle") {
        model = make_oracle_surrogate(grid);
    } else if (kind == "biased_oracle") {
        model = make_biased_oracle(grid, j.at("coord").get<std::size_t>(), j.at("bias").get<double>());
    } else {
        throw ValidationError("unknown surrogate kind '" + kind + "'");
    }
    const PfLayout layout(grid);
    if (model->input_dim() != layout.n_in() || model->output_dim() != layout.n_out())
        throw DimensionError("surrogate shape does not match case '" + grid.name + "'");
    return model;
}

std::unique_ptr<Surrogate> load_surrogate(const std::filesystem::path& path, const GridCase& grid) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open model file " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(0, "model file " + path.string() + ": " + e.what());
    }
    return surrogate_from_json(j, grid);
}

void save_surrogate(const Surrogate& model, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << model.to_json().dump() << '\n';
}

double sample_mse(const Vector& prediction, const Vector& label, const Vector& scale) {
    return (prediction - label).cwiseQuotient(scale).squaredNorm() / static_cast<double>(label.size());
}

double loss_mse(const Surrogate& model, std::span<const TrainingSample> batch) {
    if (batch.empty()) return 0.0;
    const Vector scale = model.output_scale();
    double total = 0.0;
    for (const auto& s : batch) total += sample_mse(model.forward(s.x), s.y, scale);
    return total / static_cast<double>(batch.size());
}

double loss_cv(const PowerFlow& pf, const Vector& x, const Vector& y_nn) {
    const Vector r = pf.balance_mismatch(PfInput{x}, PfOutput{y_nn});
    return r.squaredNorm() / static_cast<double>(r.size());
}

double loss_cv(const GridCase& grid, const Vector& x, const Vector& y_nn) { return loss_cv(PowerFlow(grid), x, y_nn); }

double loss_pbl(const PowerFlow& pf, const Vector& x, const Vector& y_nn) {
    const Vector r = pf.balance_mismatch(PfInput{x}, PfOutput{y_nn});
    const auto n = r.size() / 2;
    double total = 0.0;
    for (Idx k = 0; k < n; ++k) total += std::hypot(r[k], r[n + k]);
    return total / static_cast<double>(n);
}

double loss_pbl(const GridCase& grid, const Vector& x, const Vector& y_nn) {
    return loss_pbl(PowerFlow(grid), x, y_nn);
}

}  // namespace acpf_adv
