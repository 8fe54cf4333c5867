#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "acpf_adv/hash.hpp"
#include "acpf_adv/log.hpp"
#include "acpf_adv/surrogate.hpp"

namespace acpf_adv {

namespace {
using Idx = Eigen::Index;

// Adam moments for one layer.
struct Moments {
    Matrix mw, vw;
    Vector mb, vb;
};

struct Gradients {
    std::vector<Matrix> w;
    std::vector<Vector> b;
};

Gradients zero_gradients(const MlpModel& model) {
    Gradients g;
    for (const auto& layer : model.layers()) {
        g.w.push_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
        g.b.push_back(Vector::Zero(layer.bias.size()));
    }
    return g;
}

struct Losses {
    double mse = 0.0;
    double cv = 0.0;
};

// Accumulates the gradient of mse + lambda * cv for one normalized sample.
Losses accumulate(const MlpModel& model, const PowerFlow& pf, const Vector& z_in, const Vector& z_label,
                  const Vector& x_raw, double lambda_cv, Gradients& grad) {
    const auto& layers = model.layers();
    std::vector<Vector> acts{z_in};
    std::vector<Vector> pres;
    for (const auto& layer : layers) {
        pres.push_back(layer.weight * acts.back() + layer.bias);
        const Vector& pre = pres.back();
        switch (layer.activation) {
            case Activation::identity: acts.push_back(pre); break;
            case Activation::tanh: acts.push_back(pre.array().tanh()); break;
            case Activation::relu: acts.push_back(pre.cwiseMax(0.0)); break;
        }
    }
    const Vector& z_out = acts.back();
    const double n_out = static_cast<double>(z_out.size());

    Losses losses;
    const Vector diff = z_out - z_label;
    losses.mse = diff.squaredNorm() / n_out;
    Vector g = 2.0 * diff / n_out;

    if (lambda_cv > 0.0) {
        const Vector y = model.out_mean() + model.out_std().cwiseProduct(z_out);
        const PfInput x{x_raw};
        const PfOutput yo{y};
        const Vector r = pf.balance_mismatch(x, yo);
        const double m = static_cast<double>(r.size());
        losses.cv = r.squaredNorm() / m;
        const Vector dy = pf.balance_jacobian_output(x, yo).transpose() * (2.0 * r / m);
        g += lambda_cv * dy.cwiseProduct(model.out_std());
    }

    for (std::size_t l = layers.size(); l-- > 0;) {
        const auto& layer = layers[l];
        Vector delta = g;
        switch (layer.activation) {
            case Activation::identity: break;
            case Activation::tanh: delta.array() *= 1.0 - acts[l + 1].array().square(); break;
            case Activation::relu: delta.array() *= (pres[l].array() > 0.0).cast<double>(); break;
        }
        grad.w[l].noalias() += delta * acts[l].transpose();
        grad.b[l] += delta;
        if (l > 0) g = layer.weight.transpose() * delta;
    }
    return losses;
}

struct NormalizedSet {
    std::vector<Vector> z_in, z_out;
};

NormalizedSet normalize(const MlpModel& model, std::span<const TrainingSample> data) {
    NormalizedSet out;
    for (const auto& s : data) {
        out.z_in.push_back((s.x - model.in_mean()).cwiseQuotient(model.in_std()));
        out.z_out.push_back((s.y - model.out_mean()).cwiseQuotient(model.out_std()));
    }
    return out;
}

Losses evaluate(const MlpModel& model, const PowerFlow& pf, std::span<const TrainingSample> data) {
    Losses total;
    if (data.empty()) return total;
    for (const auto& s : data) {
        const Vector y = model.forward(s.x);
        total.mse += sample_mse(y, s.y, model.out_std());
        total.cv += loss_cv(pf, s.x, y);
    }
    total.mse /= static_cast<double>(data.size());
    total.cv /= static_cast<double>(data.size());
    return total;
}

std::pair<Vector, Vector> column_stats(std::span<const TrainingSample> data, bool inputs) {
    const auto dim = inputs ? data.front().x.size() : data.front().y.size();
    Vector mean = Vector::Zero(dim);
    for (const auto& s : data) mean += inputs ? s.x : s.y;
    mean /= static_cast<double>(data.size());
    Vector var = Vector::Zero(dim);
    for (const auto& s : data) var += ((inputs ? s.x : s.y) - mean).array().square().matrix();
    var /= static_cast<double>(data.size());
    Vector std = var.cwiseSqrt();
    // constant coordinates (fixed inputs) keep unit scale
    for (Idx i = 0; i < dim; ++i)
        if (!(std[i] > 1e-12)) std[i] = 1.0;
    return {mean, std};
}

}  // namespace

nlohmann::json to_json(const TrainConfig& c) {
    return {{"hidden", c.hidden},
            {"activation", to_string(c.activation)},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"final_learning_rate", c.final_learning_rate},
            {"lambda_cv", c.lambda_cv},
            {"seed", c.seed},
            {"train_fraction", c.train_fraction},
            {"val_fraction", c.val_fraction},
            {"test_fraction", c.test_fraction}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.hidden = j.value("hidden", c.hidden);
    c.activation = activation_from_string(j.value("activation", std::string(to_string(c.activation))));
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.final_learning_rate = j.value("final_learning_rate", c.final_learning_rate);
    c.lambda_cv = j.value("lambda_cv", c.lambda_cv);
    c.seed = j.value("seed", c.seed);
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.test_fraction = j.value("test_fraction", c.test_fraction);
    if (c.lambda_cv < 0.0) throw ConfigError("lambda_cv must be non-negative");
    if (c.epochs < 0 || c.batch_size == 0) throw ConfigError("epochs and batch_size must be positive");
    if (!(c.learning_rate > 0.0) || !(c.final_learning_rate > 0.0)) throw ConfigError("learning rates must be positive");
    const double sum = c.train_fraction + c.val_fraction + c.test_fraction;
    if (std::abs(sum - 1.0) > 1e-9 || c.train_fraction <= 0.0 || c.val_fraction < 0.0 || c.test_fraction < 0.0)
        throw ConfigError("dataset split fractions must be non-negative and sum to 1");
    return c;
}

DatasetSplit split_dataset(const std::vector<TrainingSample>& data, const TrainConfig& config) {
    const auto n = data.size();
    auto n_train = static_cast<std::size_t>(std::llround(config.train_fraction * static_cast<double>(n)));
    auto n_val = static_cast<std::size_t>(std::llround(config.val_fraction * static_cast<double>(n)));
    n_train = std::min(std::max<std::size_t>(n_train, n ? 1 : 0), n);
    n_val = std::min(n_val, n - n_train);
    DatasetSplit split;
    split.train.assign(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.val.assign(data.begin() + static_cast<std::ptrdiff_t>(n_train),
                     data.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    split.test.assign(data.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), data.end());
    return split;
}

TrainResult train(const GridCase& grid, std::span<const TrainingSample> train_set,
                  std::span<const TrainingSample> val_set, const TrainConfig& config) {
    if (train_set.empty()) throw ConfigError("training set is empty");
    const PowerFlow pf(grid);
    const auto n_in = pf.layout().n_in();
    const auto n_out = pf.layout().n_out();
    for (const auto& s : train_set)
        if (static_cast<std::size_t>(s.x.size()) != n_in || static_cast<std::size_t>(s.y.size()) != n_out)
            throw DimensionError("training sample shape does not match the case layout");

    std::vector<std::size_t> sizes{n_in};
    sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
    sizes.push_back(n_out);
    MlpModel model = MlpModel::initialize(sizes, config.activation, config.seed);
    auto [in_mean, in_std] = column_stats(train_set, true);
    auto [out_mean, out_std] = column_stats(train_set, false);
    model.set_normalization(in_mean, in_std, out_mean, out_std);
    model.set_metadata({{"case_name", grid.name},
                        {"train_config", to_json(config)},
                        {"train_config_hash", json_hash(to_json(config))},
                        {"n_train", train_set.size()}});

    const auto norm = normalize(model, train_set);
    std::vector<Moments> moments;
    for (const auto& layer : model.layers()) {
        moments.push_back({Matrix::Zero(layer.weight.rows(), layer.weight.cols()),
                           Matrix::Zero(layer.weight.rows(), layer.weight.cols()), Vector::Zero(layer.bias.size()),
                           Vector::Zero(layer.bias.size())});
    }
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    const double decay = config.epochs > 1
                             ? std::pow(config.final_learning_rate / config.learning_rate, 1.0 / (config.epochs - 1))
                             : 1.0;

    TrainResult result;
    long step = 0;
    double lr = config.learning_rate;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            Gradients grad = zero_gradients(model);
            for (std::size_t b = start; b < stop; ++b) {
                const auto i = order[b];
                accumulate(model, pf, norm.z_in[i], norm.z_out[i], train_set[i].x, config.lambda_cv, grad);
            }
            const double scale = 1.0 / static_cast<double>(stop - start);
            ++step;
            const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            auto& layers = model.mutable_layers();
            for (std::size_t l = 0; l < layers.size(); ++l) {
                auto& mo = moments[l];
                const Matrix gw = grad.w[l] * scale;
                const Vector gb = grad.b[l] * scale;
                mo.mw = beta1 * mo.mw + (1 - beta1) * gw;
                mo.vw = beta2 * mo.vw + (1 - beta2) * gw.cwiseAbs2();
                mo.mb = beta1 * mo.mb + (1 - beta1) * gb;
                mo.vb = beta2 * mo.vb + (1 - beta2) * gb.cwiseAbs2();
                layers[l].weight.array() -=
                    lr * (mo.mw.array() / c1) / ((mo.vw.array() / c2).sqrt() + eps);
                layers[l].bias.array() -= lr * (mo.mb.array() / c1) / ((mo.vb.array() / c2).sqrt() + eps);
            }
        }
        lr *= decay;

        const auto tr = evaluate(model, pf, train_set);
        const auto va = evaluate(model, pf, val_set);
        if (!std::isfinite(tr.mse) || !std::isfinite(tr.cv)) {
            throw NumericError("training diverged at epoch " + std::to_string(epoch) + " (train mse " +
                               std::to_string(tr.mse) + ")");
        }
        result.log.push_back({epoch, tr.mse, tr.cv, va.mse, va.cv});
        if (epoch % 20 == 0 || epoch + 1 == config.epochs)
            log().info("epoch {:4d}  train mse {:.3e} cv {:.3e}  val mse {:.3e} cv {:.3e}", epoch, tr.mse, tr.cv,
                       va.mse, va.cv);
    }
    result.model = std::move(model);
    return result;
}

}  // namespace acpf_adv
