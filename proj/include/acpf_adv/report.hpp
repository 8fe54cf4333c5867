#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "acpf_adv/attack.hpp"

namespace acpf_adv {

/// Generic string table; numeric cells hold the shortest round-trip form.
struct Table {
    std::string name;  // file stem, e.g. "loss_table"
    std::string title;
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> notes;  // extra "# " lines after the provenance line
};

/// "# provenance: {...}" line, optional note lines, header, rows.
std::string to_csv(const Table& table, const nlohmann::json& provenance);
/// Column-aligned rendering with numbers shortened for reading.
std::string to_text(const Table& table);
/// Writes <dir>/<name>.csv and <dir>/<name>.txt.
void write_table(const Table& table, const std::filesystem::path& dir, const nlohmann::json& provenance);

struct LabeledPoints {
    std::string label;
    std::vector<Vector> points;
};

/// One loss row per set, labels from fresh flat-start PF solves.
std::vector<LossTableRow> loss_table(const GridCase& grid, const Surrogate& model,
                                     const std::vector<LabeledPoints>& sets);
/// x of every converged result, in result order.
std::vector<Vector> adversarial_points(const std::vector<AttackResult>& results);

struct PerturbationSummaryRow {
    int point = 0;
    std::size_t attempted = 0;
    std::size_t converged = 0;
    // averages over converged attempts; NaN when none converged
    double l1_mean = 0.0;
    double l0_mean = 0.0;
    double y_nn_mean = 0.0;
    double y_pf_mean = 0.0;
};

/// Constrained results grouped by training point, in point order.
std::vector<PerturbationSummaryRow> perturbation_summary(const std::vector<AttackResult>& results);

struct SelectedCase {
    std::string key;
    int point = 0;
    int bus_id = 0;
    double l1 = 0.0;
    int l0 = 0;
    std::vector<std::pair<std::string, double>> variables;  // perturbed inputs and their new values
};

/// The k lowest-L1 converged constrained results for each distinct L0,
/// ordered by L0, then L1, then key.
std::vector<SelectedCase> selected_cases(const std::vector<AttackResult>& results, const PfLayout& layout,
                                         std::size_t k = 1);

struct HistogramBin {
    double lower = 0.0;
    double upper = 0.0;
    std::size_t count = 0;
};

/// Equal-width bins over [0, max L1] of the converged constrained results;
/// empty when none converged.
std::vector<HistogramBin> l1_histogram(const std::vector<AttackResult>& results, std::size_t bins = 10);

struct BusErrorRow {
    int bus_id = 0;
    std::string target;
    double max_error = 0.0;  // NaN when that sense did not converge or was not run
    double min_error = 0.0;
    double max_abs_error = 0.0;  // over converged senses; NaN when neither converged
    SolverStatus max_status = SolverStatus::NumericFailure;
    SolverStatus min_status = SolverStatus::NumericFailure;
};

/// Max/min-error results grouped by bus, in bus id order.
std::vector<BusErrorRow> per_bus_max_error(const std::vector<AttackResult>& results);

Table make_table(const std::vector<LossTableRow>& rows);
Table make_table(const std::vector<PerturbationSummaryRow>& rows);
Table make_table(const std::vector<SelectedCase>& rows);
Table make_table(const std::vector<HistogramBin>& rows);
Table make_table(const std::vector<BusErrorRow>& rows);

}  // namespace acpf_adv
