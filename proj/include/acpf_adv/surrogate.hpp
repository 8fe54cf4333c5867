#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "acpf_adv/pf_core.hpp"

namespace acpf_adv {

/// Differentiable map x -> y_NN over the flat PfInput/PfOutput layouts.
/// Implementations are immutable after construction; forward and jacobian
/// are safe to call concurrently.
class Surrogate {
  public:
    virtual ~Surrogate() = default;

    virtual std::string kind() const = 0;
    virtual std::size_t input_dim() const = 0;
    virtual std::size_t output_dim() const = 0;
    virtual Vector forward(const Vector& x) const = 0;
    virtual Matrix jacobian(const Vector& x) const = 0;
    /// Per-coordinate output scale used to normalize MSE; ones when the model
    /// has no normalization of its own.
    virtual Vector output_scale() const { return Vector::Ones(static_cast<Eigen::Index>(output_dim())); }
    virtual nlohmann::json to_json() const = 0;
};

enum class Activation { identity, tanh, relu };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view text);

struct DenseLayer {
    Matrix weight;  // out x in
    Vector bias;
    Activation activation = Activation::identity;
};

/// Fully connected network acting on z-scored inputs and producing z-scored
/// outputs: y = out_mean + out_std * net((x - in_mean) / in_std).
class MlpModel final : public Surrogate {
  public:
    MlpModel() = default;
    MlpModel(std::vector<DenseLayer> layers, Vector in_mean, Vector in_std, Vector out_mean, Vector out_std,
             nlohmann::json metadata = nlohmann::json::object());

    /// Xavier-uniform initialization, zero biases, identity normalization.
    static MlpModel initialize(std::span<const std::size_t> layer_sizes, Activation hidden, std::uint64_t seed);

    std::string kind() const override { return "mlp"; }
    std::size_t input_dim() const override;
    std::size_t output_dim() const override;
    Vector forward(const Vector& x) const override;
    Matrix jacobian(const Vector& x) const override;
    Vector output_scale() const override { return out_std_; }
    nlohmann::json to_json() const override;
    static MlpModel from_json(const nlohmann::json& j);

    /// Forward pass on normalized coordinates.
    Vector forward_normalized(const Vector& z) const;

    const std::vector<DenseLayer>& layers() const { return layers_; }
    std::vector<DenseLayer>& mutable_layers() { return layers_; }
    const Vector& in_mean() const { return in_mean_; }
    const Vector& in_std() const { return in_std_; }
    const Vector& out_mean() const { return out_mean_; }
    const Vector& out_std() const { return out_std_; }
    void set_normalization(Vector in_mean, Vector in_std, Vector out_mean, Vector out_std);
    const nlohmann::json& metadata() const { return metadata_; }
    void set_metadata(nlohmann::json m) { metadata_ = std::move(m); }

  private:
    void check_input(const Vector& x) const;

    std::vector<DenseLayer> layers_;
    Vector in_mean_, in_std_, out_mean_, out_std_;
    nlohmann::json metadata_ = nlohmann::json::object();
};

/// NN(x) := PF(x), solved from flat start. Throws NumericError when the
/// power flow does not converge.
class OracleSurrogate : public Surrogate {
  public:
    explicit OracleSurrogate(const GridCase& grid) : pf_(grid) {}

    std::string kind() const override { return "oracle"; }
    std::size_t input_dim() const override { return pf_.layout().n_in(); }
    std::size_t output_dim() const override { return pf_.layout().n_out(); }
    Vector forward(const Vector& x) const override;
    Matrix jacobian(const Vector& x) const override;
    nlohmann::json to_json() const override { return {{"kind", kind()}}; }

  protected:
    PfSolution solve(const Vector& x) const;
    PowerFlow pf_;
};

/// NN(x) := PF(x) + bias * e_coord.
class BiasedOracle final : public OracleSurrogate {
  public:
    BiasedOracle(const GridCase& grid, std::size_t coord, double bias);

    std::string kind() const override { return "biased_oracle"; }
    Vector forward(const Vector& x) const override;
    nlohmann::json to_json() const override { return {{"kind", kind()}, {"coord", coord_}, {"bias", bias_}}; }
    std::size_t coord() const { return coord_; }
    double bias() const { return bias_; }

  private:
    std::size_t coord_;
    double bias_;
};

std::unique_ptr<Surrogate> make_oracle_surrogate(const GridCase& grid);
std::unique_ptr<Surrogate> make_biased_oracle(const GridCase& grid, std::size_t coord, double bias);

/// Model files carry a "kind" of mlp, oracle or biased_oracle.
std::unique_ptr<Surrogate> surrogate_from_json(const nlohmann::json& j, const GridCase& grid);
std::unique_ptr<Surrogate> load_surrogate(const std::filesystem::path& path, const GridCase& grid);
void save_surrogate(const Surrogate& model, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Data

struct TrainingSample {
    Vector x;
    Vector y;
    double residual_norm = 0.0;

    bool operator==(const TrainingSample&) const = default;
};

struct SamplingConfig {
    double load_spread = 0.2;  // loads scaled by U[1 - spread, 1 + spread]
    bool sample_pv_v = true;   // PV magnitudes U[v_min, v_max]; else the clamped setpoint
    bool sample_pv_p = true;   // PV injections U[bounds]; else the clamped dispatch
    int max_attempts_per_sample = 10;
};

nlohmann::json to_json(const SamplingConfig& c);
SamplingConfig sampling_config_from_json(const nlohmann::json& j);

/// Nominal inputs clamped into input_bounds (REF magnitude 1.0, PV setpoints
/// clipped to [v_min, v_max]).
PfInput bounded_nominal_input(const GridCase& grid);

std::vector<TrainingSample> gen_dataset(const GridCase& grid, std::size_t n, const SamplingConfig& sampling,
                                        std::uint64_t seed);

void save_dataset(const std::vector<TrainingSample>& data, const std::filesystem::path& path,
                  const nlohmann::json& provenance = nullptr);
std::vector<TrainingSample> load_dataset(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Losses

/// Mean squared error over samples and output coordinates, each coordinate
/// divided by the model's output scale.
double loss_mse(const Surrogate& model, std::span<const TrainingSample> batch);
/// Mean squared error of a single prediction against its label.
double sample_mse(const Vector& prediction, const Vector& label, const Vector& scale);

/// Mean squared mismatch of all 2 * n_bus bus power balance equations at the
/// state implied by (x, y_NN).
double loss_cv(const PowerFlow& pf, const Vector& x, const Vector& y_nn);
double loss_cv(const GridCase& grid, const Vector& x, const Vector& y_nn);
/// Mean over buses of |dP + j dQ|, the complex power balance violation.
double loss_pbl(const PowerFlow& pf, const Vector& x, const Vector& y_nn);
double loss_pbl(const GridCase& grid, const Vector& x, const Vector& y_nn);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    std::vector<std::size_t> hidden = {64, 64};
    Activation activation = Activation::tanh;
    int epochs = 200;
    std::size_t batch_size = 64;
    double learning_rate = 1e-2;
    double final_learning_rate = 1e-4;  // exponential decay target at the last epoch
    double lambda_cv = 0.1;
    std::uint64_t seed = 7;
    double train_fraction = 0.8;
    double val_fraction = 0.1;
    double test_fraction = 0.1;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochLog {
    int epoch = 0;
    double train_mse = 0.0;
    double train_cv = 0.0;
    double val_mse = 0.0;
    double val_cv = 0.0;
};

struct DatasetSplit {
    std::vector<TrainingSample> train, val, test;
};

DatasetSplit split_dataset(const std::vector<TrainingSample>& data, const TrainConfig& config);

struct TrainResult {
    MlpModel model;
    std::vector<EpochLog> log;
};

/// Mini-batch Adam on loss_mse + lambda_cv * loss_cv over `train`; `val` is
/// only evaluated. Throws NumericError if the loss becomes non-finite.
TrainResult train(const GridCase& grid, std::span<const TrainingSample> train_set,
                  std::span<const TrainingSample> val_set, const TrainConfig& config);

}  // namespace acpf_adv
