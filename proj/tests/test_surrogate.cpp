#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "acpf_adv/surrogate.hpp"
#include "fixtures.hpp"
#include "pf_oracle.hpp"

using namespace acpf_adv;
using namespace acpf_adv::testing;

namespace {

MlpModel small_tanh_model() {
    // 2 -> 3 -> 2 with fixed weights
    DenseLayer l1{Matrix(3, 2), Vector(3), Activation::tanh};
    l1.weight << 0.5, -0.3, 0.2, 0.8, -0.7, 0.1;
    l1.bias << 0.1, -0.2, 0.05;
    DenseLayer l2{Matrix(2, 3), Vector(2), Activation::identity};
    l2.weight << 1.0, -0.5, 0.25, 0.3, 0.6, -0.9;
    l2.bias << 0.0, 0.4;
    return MlpModel({l1, l2}, Vector::Zero(2), Vector::Ones(2), Vector::Zero(2), Vector::Ones(2));
}

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("acpf_adv_test_" + name);
}

}  // namespace

TEST_CASE("affine model is a de-normalized affine map") {
    DenseLayer layer{Matrix(2, 3), Vector(2), Activation::identity};
    layer.weight << 1, 2, 3, -1, 0.5, 0;
    layer.bias << 0.1, -0.2;
    Vector in_mean(3), in_std(3), out_mean(2), out_std(2);
    in_mean << 1, 2, 3;
    in_std << 2, 4, 0.5;
    out_mean << 10, -10;
    out_std << 3, 0.1;
    const MlpModel model({layer}, in_mean, in_std, out_mean, out_std);
    Vector x(3);
    x << 0.3, -1.0, 2.5;
    const Vector z = (x - in_mean).cwiseQuotient(in_std);
    const Vector expect = out_mean + out_std.cwiseProduct(layer.weight * z + layer.bias);
    CHECK((model.forward(x) - expect).cwiseAbs().maxCoeff() < 1e-14);
    const Matrix expect_j = out_std.asDiagonal() * layer.weight * in_std.cwiseInverse().asDiagonal();
    CHECK((model.jacobian(x) - expect_j).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("hand-sized tanh network Jacobian follows the chain rule") {
    const auto model = small_tanh_model();
    const Vector x = (Vector(2) << 0.4, -1.3).finished();
    const auto& w1 = model.layers()[0].weight;
    const auto& b1 = model.layers()[0].bias;
    const auto& w2 = model.layers()[1].weight;
    Matrix expect = Matrix::Zero(2, 2);
    for (int o = 0; o < 2; ++o)
        for (int i = 0; i < 2; ++i)
            for (int h = 0; h < 3; ++h) {
                const double pre = w1(h, 0) * x[0] + w1(h, 1) * x[1] + b1[h];
                const double t = std::tanh(pre);
                expect(o, i) += w2(o, h) * (1 - t * t) * w1(h, i);
            }
    CHECK((model.jacobian(x) - expect).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("forward rejects bad input") {
    const auto model = small_tanh_model();
    CHECK_THROWS_AS(model.forward(Vector::Zero(3)), DimensionError);
    CHECK_THROWS_AS(model.forward(Vector::Constant(2, std::nan(""))), NumericError);
}

TEST_CASE("MLP Jacobian matches finite differences") {
    const std::size_t sizes[] = {28, 64, 64, 28};
    std::mt19937_64 rng(1);
    std::normal_distribution<double> normal;
    SUBCASE("tanh") {
        const auto model = MlpModel::initialize(sizes, Activation::tanh, 11);
        for (int trial = 0; trial < 20; ++trial) {
            Vector x(28);
            for (auto& v : x) v = normal(rng);
            const Matrix fd = fd_jacobian([&](const Vector& v) { return model.forward(v); }, x);
            CHECK(rel_error(model.jacobian(x), fd) < 1e-6);
        }
    }
    SUBCASE("relu away from kinks") {
        const auto model = MlpModel::initialize(sizes, Activation::relu, 12);
        int checked = 0;
        for (int trial = 0; trial < 200 && checked < 20; ++trial) {
            Vector x(28);
            for (auto& v : x) v = normal(rng);
            // skip points within 1e-4 of a kink in any hidden unit
            Vector h = x;
            bool near_kink = false;
            for (const auto& layer : model.layers()) {
                const Vector pre = layer.weight * h + layer.bias;
                if (layer.activation == Activation::relu && pre.cwiseAbs().minCoeff() < 1e-4) near_kink = true;
                h = layer.activation == Activation::relu ? Vector(pre.cwiseMax(0.0)) : pre;
            }
            if (near_kink) continue;
            ++checked;
            const Matrix fd = fd_jacobian([&](const Vector& v) { return model.forward(v); }, x);
            CHECK(rel_error(model.jacobian(x), fd) < 1e-6);
        }
        CHECK(checked == 20);
    }
}

TEST_CASE("model JSON round trip is bit-exact") {
    const std::size_t sizes[] = {28, 16, 28};
    auto model = MlpModel::initialize(sizes, Activation::tanh, 3);
    Vector mean = Vector::LinSpaced(28, -1.0 / 3.0, 2.0 / 7.0);
    Vector std = Vector::LinSpaced(28, 0.1, 1.7);
    model.set_normalization(mean, std, mean * 0.5, std * 3.0);
    model.set_metadata({{"case_name", "x"}, {"train_config_hash", "abc"}});
    const auto path = temp_path("model.json");
    save_surrogate(model, path);
    const auto grid = case14();
    const auto back = load_surrogate(path, grid);
    REQUIRE(back->kind() == "mlp");
    const auto& m2 = dynamic_cast<const MlpModel&>(*back);
    CHECK(m2.to_json() == model.to_json());
    CHECK(m2.in_mean() == model.in_mean());
    for (std::size_t l = 0; l < model.layers().size(); ++l) CHECK(m2.layers()[l].weight == model.layers()[l].weight);
    std::filesystem::remove(path);
}

TEST_CASE("oracle surrogates") {
    const auto grid = case14();
    const PowerFlow pf(grid);
    std::mt19937_64 rng(17);
    const auto oracle = make_oracle_surrogate(grid);
    const auto out_v12 = pf.layout().output_index(12, Quantity::v_mag);
    const auto biased = make_biased_oracle(grid, out_v12, 0.3);
    for (int trial = 0; trial < 5; ++trial) {
        const auto x = random_input(grid, rng);
        const auto sol = pf.solve(x);
        CHECK(oracle->forward(x.flat) == sol.output.flat);
        Vector diff = biased->forward(x.flat) - sol.output.flat;
        CHECK(diff[static_cast<Eigen::Index>(out_v12)] == doctest::Approx(0.3).epsilon(1e-15));
        diff[static_cast<Eigen::Index>(out_v12)] = 0.0;
        CHECK(diff.cwiseAbs().maxCoeff() == 0.0);
        CHECK(biased->jacobian(x.flat) == pf.output_jacobian(sol, x));
    }
    // kind round trip through a model file
    const auto reloaded = surrogate_from_json(biased->to_json(), grid);
    CHECK(reloaded->kind() == "biased_oracle");
    CHECK(dynamic_cast<const BiasedOracle&>(*reloaded).bias() == 0.3);
}

TEST_CASE("losses") {
    const auto grid = case14();
    const PowerFlow pf(grid);
    std::mt19937_64 rng(23);
    const auto x = random_input(grid, rng);
    const auto sol = pf.solve(x);

    SUBCASE("exact solution has zero constraint and balance loss") {
        CHECK(loss_cv(pf, x.flat, sol.output.flat) < 1e-20);
        CHECK(loss_pbl(pf, x.flat, sol.output.flat) < 1e-9);
    }
    SUBCASE("perfect prediction has zero MSE") {
        const auto oracle = make_oracle_surrogate(grid);
        const std::vector<TrainingSample> batch{{x.flat, sol.output.flat, sol.residual_norm}};
        CHECK(loss_mse(*oracle, batch) == 0.0);
    }
    SUBCASE("biased oracle loss matches an independent mismatch evaluation") {
        const auto& layout = pf.layout();
        for (int bus : {4, 12}) {
            const auto coord = layout.output_index(bus, Quantity::v_mag);
            const double c = 0.02;
            const auto model = make_biased_oracle(grid, coord, c);
            const Vector y = model->forward(x.flat);

            // rebuild the implied bus state and specified injections by hand
            std::vector<double> vm(14), va(14), p(14), q(14);
            for (std::size_t i = 0; i < layout.n_in(); ++i) {
                const auto& cd = layout.inputs()[i];
                const double v = x.flat[static_cast<Eigen::Index>(i)];
                if (cd.quantity == Quantity::p_inj) p[cd.bus] = v;
                if (cd.quantity == Quantity::q_inj) q[cd.bus] = v;
                if (cd.quantity == Quantity::v_ang) va[cd.bus] = v;
                if (cd.quantity == Quantity::v_mag) vm[cd.bus] = v;
            }
            for (std::size_t i = 0; i < layout.n_out(); ++i) {
                const auto& cd = layout.outputs()[i];
                const double v = y[static_cast<Eigen::Index>(i)];
                if (cd.quantity == Quantity::p_inj) p[cd.bus] = v;
                if (cd.quantity == Quantity::q_inj) q[cd.bus] = v;
                if (cd.quantity == Quantity::v_ang) va[cd.bus] = v;
                if (cd.quantity == Quantity::v_mag) vm[cd.bus] = v;
            }
            const auto s = complex_injections(grid, vm, va);
            double sq = 0.0, abs_sum = 0.0;
            for (int k = 0; k < 14; ++k) {
                const double dp = s[k].real() - p[static_cast<std::size_t>(k)];
                const double dq = s[k].imag() - q[static_cast<std::size_t>(k)];
                sq += dp * dp + dq * dq;
                abs_sum += std::hypot(dp, dq);
            }
            CHECK(loss_cv(pf, x.flat, y) == doctest::Approx(sq / 28.0).epsilon(1e-9));
            CHECK(loss_pbl(pf, x.flat, y) == doctest::Approx(abs_sum / 14.0).epsilon(1e-9));
            CHECK(loss_cv(pf, x.flat, y) > 1e-6);
        }
    }
}

TEST_CASE("dataset generation") {
    const auto grid = case14();
    SUBCASE("1000 samples, all solved to tolerance, every label has zero cv loss") {
        const auto data = gen_dataset(grid, 1000, {}, 7);
        CHECK(data.size() == 1000);
        const PowerFlow pf(grid);
        const auto bounds = input_bounds(grid);
        const auto mask = bounds.fixed_mask();
        const PfLayout layout(grid);
        double worst_cv = 0.0;
        for (const auto& s : data) {
            CHECK(s.residual_norm <= 1e-8);
            worst_cv = std::max(worst_cv, loss_cv(pf, s.x, s.y));
            for (std::size_t i = 0; i < layout.n_in(); ++i) {
                const auto k = static_cast<Eigen::Index>(i);
                if (layout.inputs()[i].kind != BusKind::PQ) {
                    CHECK(s.x[k] >= bounds.lower[k]);
                    CHECK(s.x[k] <= bounds.upper[k]);
                }
            }
        }
        CHECK(worst_cv < 1e-16);
    }
    SUBCASE("zero-width sampling reproduces the nominal solution") {
        SamplingConfig none;
        none.load_spread = 0.0;
        none.sample_pv_p = false;
        none.sample_pv_v = false;
        const auto data = gen_dataset(grid, 1, none, 1);
        const auto x = bounded_nominal_input(grid);
        CHECK(data[0].x == x.flat);
        CHECK(data[0].y == solve_pf(grid, x).output.flat);
    }
    SUBCASE("same seed gives bit-identical datasets; file round trip is exact") {
        const auto a = gen_dataset(grid, 50, {}, 42);
        const auto b = gen_dataset(grid, 50, {}, 42);
        CHECK(a == b);
        const auto c = gen_dataset(grid, 50, {}, 43);
        CHECK_FALSE(a == c);
        const auto path = temp_path("data.jsonl");
        save_dataset(a, path, {{"seed", 42}});
        CHECK(load_dataset(path) == a);
        std::filesystem::remove(path);
    }
    SUBCASE("unsolvable sampling region is reported") {
        const auto toy = two_bus(0.0, 0.1, 10.0, 0.0);  // beyond the line's transfer limit
        SamplingConfig cfg;
        cfg.max_attempts_per_sample = 100;
        CHECK_THROWS_AS(gen_dataset(toy, 1, cfg, 0), ConfigError);
    }
}

TEST_CASE("training") {
    const auto grid = case14();
    SUBCASE("a single repeated sample is memorized") {
        const auto one = gen_dataset(grid, 1, {}, 5);
        const std::vector<TrainingSample> data(32, one.front());
        TrainConfig cfg;
        cfg.epochs = 100;
        cfg.batch_size = 8;
        cfg.lambda_cv = 0.0;
        const auto result = train(grid, data, {}, cfg);
        CHECK(result.log.back().train_mse < 1e-8);
        CHECK(loss_mse(result.model, data) == doctest::Approx(result.log.back().train_mse));
    }
    SUBCASE("short run reduces both losses and is deterministic") {
        const auto data = gen_dataset(grid, 200, {}, 9);
        TrainConfig cfg;
        cfg.epochs = 15;
        cfg.lambda_cv = 1.0;
        const auto split = split_dataset(data, cfg);
        CHECK(split.train.size() == 160);
        CHECK(split.val.size() == 20);
        CHECK(split.test.size() == 20);
        const auto a = train(grid, split.train, split.val, cfg);
        const auto b = train(grid, split.train, split.val, cfg);
        CHECK(a.model.to_json() == b.model.to_json());
        CHECK(a.log.back().train_mse < a.log.front().train_mse);
        CHECK(a.log.size() == 15);
        // normalization std of fixed inputs falls back to 1
        CHECK(a.model.in_std()[0] == 1.0);
        const auto& meta = a.model.metadata();
        CHECK(meta.at("case_name") == grid.name);
        CHECK(meta.contains("train_config_hash"));

        // Jacobian of a trained model against finite differences
        std::mt19937_64 rng(2);
        for (int trial = 0; trial < 20; ++trial) {
            const auto x = random_input(grid, rng);
            const Matrix fd = fd_jacobian([&](const Vector& v) { return a.model.forward(v); }, x.flat);
            CHECK(rel_error(a.model.jacobian(x.flat), fd) < 1e-6);
        }
    }
    SUBCASE("config validation") {
        auto j = to_json(TrainConfig{});
        j["train_fraction"] = 0.9;
        CHECK_THROWS_AS(train_config_from_json(j), ConfigError);
        j = to_json(TrainConfig{});
        j["lambda_cv"] = -1.0;
        CHECK_THROWS_AS(train_config_from_json(j), ConfigError);
    }
}
