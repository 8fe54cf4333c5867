#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "acpf_adv/nlp_solver.hpp"
#include "acpf_adv/surrogate.hpp"

namespace acpf_adv {

enum class AttackMode { MaxError, MinError, ConstrainedError };

std::string_view to_string(AttackMode m);
AttackMode attack_mode_from_string(std::string_view text);

/// Change threshold for counting a perturbed coordinate.
inline constexpr double kL0Threshold = 1e-6;
/// |V - 1| above this at any bus flags a possibly unphysical PF branch.
inline constexpr double kSuspectVoltageDeviation = 0.25;

struct AttackSpec {
    std::size_t target = 0;  // index into the flat output vector
    AttackMode mode = AttackMode::MaxError;
    double lower_bound = 0.94;  // l_i, constrained mode
    double delta = 0.04;        // margin, constrained mode
    Vector x0;                  // start point (max/min) or reference point (constrained)
    Vector lower;               // input box; fixed coordinates have lower == upper
    Vector upper;
    int point = -1;  // training point index, constrained campaigns

    /// Max/min-error spec on output (bus_id, q) starting from the bounded
    /// nominal input.
    static AttackSpec max_error(const GridCase& grid, int bus_id, Quantity q, AttackMode mode);
    /// Constrained-error spec on v_mag at `bus_id` around the reference x0;
    /// loads and REF quantities stay at x0's values.
    static AttackSpec constrained(const GridCase& grid, int bus_id, const Vector& x0, double lower_bound,
                                  double delta, int point = -1);
};

/// Fail-fast checks of the AttackSpec invariants.
void validate(const AttackSpec& spec, const PfLayout& layout);

struct AttackResult {
    std::string key;  // stable sort key, e.g. "max/003/+" or "con/0004/012"
    AttackMode mode = AttackMode::MaxError;
    std::size_t target = 0;
    std::string target_name;  // e.g. "v_mag@12"
    int bus_id = 0;
    int point = -1;
    double lower_bound = 0.0;
    double delta = 0.0;
    Vector x;
    Vector x0;
    Vector y_nn;
    Vector y_pf;
    double objective = 0.0;  // signed error (max/min) or L1 distance (constrained)
    double error = 0.0;      // (y_nn - y_pf)[target]
    double l1_norm = 0.0;
    int l0_count = 0;
    double pf_residual = 0.0;
    bool pf_converged = false;
    SolverStatus status = SolverStatus::NumericFailure;
    int outer_iterations = 0;
    int inner_iterations = 0;
    double max_violation = 0.0;
    double kkt_residual = 0.0;
    bool suspect_branch = false;
    std::string message;
    double wall_time = 0.0;  // seconds; kept out of the deterministic JSON

    /// Solver converged and the final PF solve converged.
    bool converged() const { return is_converged(status) && pf_converged; }
};

nlohmann::json to_json(const AttackResult& r);
AttackResult attack_result_from_json(const nlohmann::json& j);

/// NLP over x (max/min error) or over split variables [p+, p-] (constrained).
/// The returned problem shares PF warm-start state between its callables
/// and must be used from one thread.
NlpProblem build_max_error(const GridCase& grid, const Surrogate& model, const AttackSpec& spec);
NlpProblem build_constrained_error(const GridCase& grid, const Surrogate& model, const AttackSpec& spec);

/// Builds, solves and evaluates one attack.
AttackResult run_attack(const GridCase& grid, const Surrogate& model, const AttackSpec& spec,
                        const SolverConfig& solver = {});

struct Verification {
    bool consistent = true;
    std::vector<std::string> issues;
    double error = 0.0;  // recomputed (y_nn - y_pf)[target]
    double y_nn = 0.0;
    double y_pf = 0.0;
    bool suspect_branch = false;
};

/// Independent re-evaluation: fresh flat-start PF solve and NN forward at
/// x*, bound and fixed-coordinate compliance, L1/L0 recomputation and, for
/// converged constrained results, both output constraints.
Verification verify_result(const GridCase& grid, const Surrogate& model, const AttackResult& result,
                           double tol = 1e-6);

struct CampaignOptions {
    SolverConfig solver;
    int workers = 1;
    double lower_bound = 0.94;
    double delta = 0.04;
};

nlohmann::json to_json(const CampaignOptions& c);
CampaignOptions campaign_options_from_json(const nlohmann::json& j);

/// Runs attacks on a worker pool; output order follows `specs`.
std::vector<AttackResult> run_attacks(const GridCase& grid, const Surrogate& model,
                                      const std::vector<AttackSpec>& specs, const CampaignOptions& options);

/// Two attempts (max then min) per bus in id order: v_mag at PQ buses,
/// q_inj at PV and REF buses.
std::vector<AttackSpec> max_error_specs(const GridCase& grid);
std::vector<AttackResult> run_max_error_campaign(const GridCase& grid, const Surrogate& model,
                                                 const CampaignOptions& options = {});

struct TrainingPoint {
    int index = 0;
    Vector x;
};

/// PQ bus ids of the case in id order.
std::vector<int> pq_bus_ids(const GridCase& grid);
std::vector<AttackSpec> constrained_specs(const GridCase& grid, const std::vector<TrainingPoint>& points,
                                          const std::vector<int>& buses, double lower_bound, double delta);
std::vector<AttackResult> run_constrained_campaign(const GridCase& grid, const Surrogate& model,
                                                   const std::vector<TrainingPoint>& points,
                                                   const std::vector<int>& buses,
                                                   const CampaignOptions& options = {});

struct LossTableRow {
    std::string label;
    std::size_t count = 0;
    double mse_mean = 0.0, mse_std = 0.0, mse_max = 0.0;
    double pbl_mean = 0.0, pbl_std = 0.0, pbl_max = 0.0;
    double pbl_min = 0.0;
};

/// MSE (against fresh flat-start PF labels, normalized by the model's
/// output scale) and PBL statistics over the points. Throws ConfigError
/// when `points` is empty or a label cannot be solved.
LossTableRow evaluate_adversarial_set(const GridCase& grid, const Surrogate& model, const std::vector<Vector>& points,
                                      const std::string& label = "Adversarial");
/// Same statistics against stored labels.
LossTableRow evaluate_samples(const GridCase& grid, const Surrogate& model, std::span<const TrainingSample> samples,
                              const std::string& label);

/// JSON-lines: header line {"provenance": ..., "run_info": ...} then one
/// result per line. Only "run_info" carries run-dependent values
/// (timestamp, wall times).
void save_results(const std::vector<AttackResult>& results, const std::filesystem::path& path,
                  const nlohmann::json& provenance);
struct ResultsFile {
    nlohmann::json provenance;
    nlohmann::json run_info;
    std::vector<AttackResult> results;
};
ResultsFile load_results(const std::filesystem::path& path);

}  // namespace acpf_adv
