#include "acpf_adv/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include <fmt/format.h>

#include "acpf_adv/errors.hpp"

namespace acpf_adv {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string cell(double d) { return std::isnan(d) ? "nan" : fmt::format("{}", d); }
std::string cell(std::size_t n) { return fmt::format("{}", n); }
std::string cell(int n) { return fmt::format("{}", n); }

bool is_number(const std::string& s) {
    if (s.empty()) return false;
    char* end = nullptr;
    std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size();
}

// Four significant digits for the text view; integers stay as they are.
std::string shorten(const std::string& s) {
    if (!is_number(s) || s.find_first_of(".eE") == std::string::npos) return s;
    return fmt::format("{:.4g}", std::strtod(s.c_str(), nullptr));
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

double mean(const std::vector<double>& v) {
    if (v.empty()) return kNaN;
    double s = 0.0;
    for (double d : v) s += d;
    return s / static_cast<double>(v.size());
}

bool is_max_mode(AttackMode m) { return m == AttackMode::MaxError || m == AttackMode::MinError; }

}  // namespace

std::string to_csv(const Table& table, const nlohmann::json& provenance) {
    std::string out = "# provenance: " + provenance.dump() + "\n";
    for (const auto& n : table.notes) out += "# " + n + "\n";
    auto line = [&](const std::vector<std::string>& fields) {
        for (std::size_t k = 0; k < fields.size(); ++k) out += (k ? "," : "") + csv_field(fields[k]);
        out += "\n";
    };
    line(table.columns);
    for (const auto& r : table.rows) line(r);
    return out;
}

std::string to_text(const Table& table) {
    std::vector<std::vector<std::string>> cells{table.columns};
    for (const auto& r : table.rows) {
        std::vector<std::string> row;
        for (const auto& c : r) row.push_back(shorten(c));
        cells.push_back(std::move(row));
    }
    std::vector<std::size_t> width(table.columns.size(), 0);
    for (const auto& r : cells)
        for (std::size_t k = 0; k < r.size() && k < width.size(); ++k) width[k] = std::max(width[k], r[k].size());

    std::string out = table.title + "\n";
    for (const auto& n : table.notes) out += n + "\n";
    for (std::size_t i = 0; i < cells.size(); ++i) {
        std::string line;
        for (std::size_t k = 0; k < cells[i].size(); ++k)
            line += fmt::format("{}{:<{}}", k ? "  " : "", cells[i][k], k + 1 < cells[i].size() ? width[k] : 0);
        out += line + "\n";
        if (i == 0) {
            std::size_t total = 0;
            for (std::size_t k = 0; k < width.size(); ++k) total += width[k] + (k ? 2 : 0);
            out += std::string(total, '-') + "\n";
        }
    }
    if (table.rows.empty()) out += "(no rows)\n";
    return out;
}

void write_table(const Table& table, const std::filesystem::path& dir, const nlohmann::json& provenance) {
    std::filesystem::create_directories(dir);
    auto write = [](const std::filesystem::path& p, const std::string& text) {
        std::ofstream out(p, std::ios::binary);
        if (!out) throw ConfigError("cannot write " + p.string());
        out << text;
    };
    write(dir / (table.name + ".csv"), to_csv(table, provenance));
    write(dir / (table.name + ".txt"), to_text(table));
}

std::vector<LossTableRow> loss_table(const GridCase& grid, const Surrogate& model,
                                     const std::vector<LabeledPoints>& sets) {
    std::vector<LossTableRow> rows;
    for (const auto& s : sets) rows.push_back(evaluate_adversarial_set(grid, model, s.points, s.label));
    return rows;
}

std::vector<Vector> adversarial_points(const std::vector<AttackResult>& results) {
    std::vector<Vector> out;
    for (const auto& r : results)
        if (r.converged()) out.push_back(r.x);
    return out;
}

std::vector<PerturbationSummaryRow> perturbation_summary(const std::vector<AttackResult>& results) {
    struct Acc {
        std::size_t attempted = 0;
        std::vector<double> l1, l0, y_nn, y_pf;
    };
    std::map<int, Acc> groups;
    for (const auto& r : results) {
        if (r.mode != AttackMode::ConstrainedError) continue;
        auto& g = groups[r.point];
        ++g.attempted;
        if (!r.converged()) continue;
        const auto i = static_cast<Eigen::Index>(r.target);
        g.l1.push_back(r.l1_norm);
        g.l0.push_back(static_cast<double>(r.l0_count));
        g.y_nn.push_back(r.y_nn[i]);
        g.y_pf.push_back(r.y_pf[i]);
    }
    std::vector<PerturbationSummaryRow> rows;
    for (const auto& [point, g] : groups)
        rows.push_back({point, g.attempted, g.l1.size(), mean(g.l1), mean(g.l0), mean(g.y_nn), mean(g.y_pf)});
    return rows;
}

std::vector<SelectedCase> selected_cases(const std::vector<AttackResult>& results, const PfLayout& layout,
                                         std::size_t k) {
    std::vector<const AttackResult*> pool;
    for (const auto& r : results)
        if (r.mode == AttackMode::ConstrainedError && r.converged()) pool.push_back(&r);
    std::stable_sort(pool.begin(), pool.end(), [](const AttackResult* a, const AttackResult* b) {
        if (a->l0_count != b->l0_count) return a->l0_count < b->l0_count;
        if (a->l1_norm != b->l1_norm) return a->l1_norm < b->l1_norm;
        return a->key < b->key;
    });
    std::vector<SelectedCase> out;
    std::map<int, std::size_t> taken;
    for (const auto* r : pool) {
        if (taken[r->l0_count]++ >= k) continue;
        if (static_cast<std::size_t>(r->x.size()) != layout.n_in())
            throw DimensionError(fmt::format("result {} has {} inputs, layout has {}", r->key, r->x.size(),
                                             layout.n_in()));
        SelectedCase c{r->key, r->point, r->bus_id, r->l1_norm, r->l0_count, {}};
        for (Eigen::Index j = 0; j < r->x.size(); ++j)
            if (std::abs(r->x[j] - r->x0[j]) > kL0Threshold)
                c.variables.emplace_back(layout.inputs()[static_cast<std::size_t>(j)].name(), r->x[j]);
        out.push_back(std::move(c));
    }
    return out;
}

std::vector<HistogramBin> l1_histogram(const std::vector<AttackResult>& results, std::size_t bins) {
    if (bins == 0) throw ConfigError("histogram needs at least one bin");
    std::vector<double> l1;
    for (const auto& r : results)
        if (r.mode == AttackMode::ConstrainedError && r.converged()) l1.push_back(r.l1_norm);
    if (l1.empty()) return {};
    const double hi = *std::max_element(l1.begin(), l1.end());
    if (hi == 0.0) return {{0.0, 0.0, l1.size()}};
    const double width = hi / static_cast<double>(bins);
    std::vector<HistogramBin> out(bins);
    for (std::size_t b = 0; b < bins; ++b) {
        out[b].lower = width * static_cast<double>(b);
        out[b].upper = b + 1 == bins ? hi : width * static_cast<double>(b + 1);
    }
    for (double v : l1) {
        auto b = static_cast<std::size_t>(v / width);
        b = std::min(b, bins - 1);
        // keep each value inside its printed edges despite rounding in v / width
        while (b > 0 && v < out[b].lower) --b;
        while (b + 1 < bins && v >= out[b + 1].lower) ++b;
        ++out[b].count;
    }
    return out;
}

std::vector<BusErrorRow> per_bus_max_error(const std::vector<AttackResult>& results) {
    std::map<int, BusErrorRow> rows;
    for (const auto& r : results) {
        if (!is_max_mode(r.mode)) continue;
        auto [it, fresh] = rows.try_emplace(r.bus_id);
        auto& row = it->second;
        if (fresh) {
            row.bus_id = r.bus_id;
            row.target = r.target_name;
            row.max_error = row.min_error = kNaN;
        }
        const double e = r.converged() ? r.error : kNaN;
        if (r.mode == AttackMode::MaxError) {
            row.max_error = e;
            row.max_status = r.status;
        } else {
            row.min_error = e;
            row.min_status = r.status;
        }
    }
    std::vector<BusErrorRow> out;
    for (auto& [id, row] : rows) {
        row.max_abs_error = kNaN;
        for (double e : {row.max_error, row.min_error})
            if (!std::isnan(e) && (std::isnan(row.max_abs_error) || std::abs(e) > row.max_abs_error))
                row.max_abs_error = std::abs(e);
        out.push_back(row);
    }
    return out;
}

Table make_table(const std::vector<LossTableRow>& rows) {
    Table t{"loss_table", "Losses of the surrogate by dataset",
            {"dataset", "n_points", "mse_mean", "mse_stdev", "mse_max", "pbl_mean", "pbl_stdev", "pbl_max"}, {}, {}};
    for (const auto& r : rows)
        t.rows.push_back({r.label, cell(r.count), cell(r.mse_mean), cell(r.mse_std), cell(r.mse_max),
                          cell(r.pbl_mean), cell(r.pbl_std), cell(r.pbl_max)});
    return t;
}

Table make_table(const std::vector<PerturbationSummaryRow>& rows) {
    Table t{"perturbation_summary", "Adversarial perturbations by training point (averages over converged)",
            {"training_point", "converged", "l1_mean", "l0_mean", "y_nn_mean", "y_pf_mean"}, {}, {}};
    std::size_t attempted = 0, converged = 0;
    for (const auto& r : rows) {
        attempted += r.attempted;
        converged += r.converged;
        t.rows.push_back({cell(r.point), cell(r.converged), cell(r.l1_mean), cell(r.l0_mean), cell(r.y_nn_mean),
                          cell(r.y_pf_mean)});
    }
    std::string per_point;
    for (const auto& r : rows) per_point += (per_point.empty() ? "" : " ") + cell(r.attempted);
    t.notes.push_back(fmt::format("attempted per point: {}", per_point.empty() ? "-" : per_point));
    t.notes.push_back(fmt::format("converged total: {} of {}", converged, attempted));
    return t;
}

Table make_table(const std::vector<SelectedCase>& rows) {
    Table t{"selected_cases", "Adversarial perturbations for selected cases (lowest L1 per L0)",
            {"training_point", "targeted_bus", "l1", "l0", "variables"}, {}, {}};
    for (const auto& r : rows) {
        std::string vars;
        for (const auto& [name, value] : r.variables) vars += fmt::format("{}{}={}", vars.empty() ? "" : " ", name, value);
        t.rows.push_back({cell(r.point), cell(r.bus_id), cell(r.l1), cell(r.l0), vars});
    }
    return t;
}

Table make_table(const std::vector<HistogramBin>& rows) {
    Table t{"l1_histogram", "Histogram of L1 perturbation magnitudes", {"bin_lower", "bin_upper", "count"}, {}, {}};
    for (const auto& r : rows) t.rows.push_back({cell(r.lower), cell(r.upper), cell(r.count)});
    return t;
}

Table make_table(const std::vector<BusErrorRow>& rows) {
    Table t{"per_bus_max_error",
            "Maximum error per bus by objective sense",
            {"bus_id", "target", "max_error", "min_error", "max_abs_error", "max_status", "min_status"},
            {},
            {}};
    for (const auto& r : rows)
        t.rows.push_back({cell(r.bus_id), r.target, cell(r.max_error), cell(r.min_error), cell(r.max_abs_error),
                          std::string(to_string(r.max_status)), std::string(to_string(r.min_status))});
    return t;
}

}  // namespace acpf_adv
