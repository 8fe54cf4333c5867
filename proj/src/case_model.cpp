#include "acpf_adv/case_model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "acpf_adv/log.hpp"

namespace acpf_adv {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

struct Row {
    int line = 0;
    std::vector<double> values;
};

struct MatrixBlock {
    int line = 0;
    std::vector<Row> rows;
};

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

double parse_number(std::string_view token, int line) {
    double value = 0.0;
    // from_chars rejects a leading '+'
    if (!token.empty() && token.front() == '+') token.remove_prefix(1);
    const auto* end = token.data() + token.size();
    auto [ptr, ec] = std::from_chars(token.data(), end, value);
    if (ec != std::errc() || ptr != end) {
        if (token == "Inf" || token == "inf") return HUGE_VAL;
        if (token == "-Inf" || token == "-inf") return -HUGE_VAL;
        throw ParseError(line, "cannot parse number '" + std::string(token) + "'");
    }
    return value;
}

// Splits one matrix row into numbers. Separators are whitespace and commas.
std::vector<double> parse_row(std::string_view text, int line) {
    std::vector<double> values;
    std::size_t pos = 0;
    while (pos < text.size()) {
        while (pos < text.size() && (std::isspace(static_cast<unsigned char>(text[pos])) || text[pos] == ','))
            ++pos;
        std::size_t end = pos;
        while (end < text.size() && !std::isspace(static_cast<unsigned char>(text[end])) && text[end] != ',')
            ++end;
        if (end > pos) values.push_back(parse_number(text.substr(pos, end - pos), line));
        pos = end;
    }
    return values;
}

struct ParsedText {
    std::string function_name;
    std::map<std::string, double> scalars;
    std::map<std::string, MatrixBlock> matrices;
};

ParsedText scan(std::string_view text) {
    // Strip comments, remembering the source line of every retained line.
    std::vector<std::pair<int, std::string>> lines;
    {
        int number = 0;
        std::size_t start = 0;
        while (start <= text.size()) {
            auto stop = text.find('\n', start);
            if (stop == std::string_view::npos) stop = text.size();
            ++number;
            auto line = text.substr(start, stop - start);
            if (auto pct = line.find('%'); pct != std::string_view::npos) line = line.substr(0, pct);
            lines.emplace_back(number, std::string(trim(line)));
            start = stop + 1;
        }
    }

    ParsedText out;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto& [line_no, line] = lines[i];
        if (line.rfind("function", 0) == 0) {
            if (auto eq = line.find('='); eq != std::string::npos)
                out.function_name = std::string(trim(std::string_view(line).substr(eq + 1)));
            continue;
        }
        if (line.rfind("mpc.", 0) != 0) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError(line_no, "expected '=' after field name");
        const std::string field(trim(std::string_view(line).substr(4, eq - 4)));
        std::string_view rhs = trim(std::string_view(line).substr(eq + 1));

        if (!rhs.empty() && rhs.front() == '[') {
            MatrixBlock block;
            block.line = line_no;
            std::string pending;
            int pending_line = line_no;
            bool closed = false;
            auto feed = [&](std::string_view chunk, int chunk_line) {
                for (char c : chunk) {
                    if (c == ']') {
                        closed = true;
                        break;
                    }
                    if (c == ';') {
                        auto row = parse_row(pending, pending_line);
                        if (!row.empty()) block.rows.push_back({pending_line, std::move(row)});
                        pending.clear();
                        pending_line = chunk_line;
                    } else {
                        if (trim(pending).empty()) pending_line = chunk_line;
                        pending.push_back(c);
                    }
                }
                if (!closed) {
                    // a newline also terminates a row
                    auto row = parse_row(pending, pending_line);
                    if (!row.empty()) block.rows.push_back({pending_line, std::move(row)});
                    pending.clear();
                }
            };
            feed(rhs.substr(1), line_no);
            while (!closed) {
                if (++i >= lines.size()) throw ParseError(block.line, "unterminated matrix for mpc." + field);
                feed(lines[i].second, lines[i].first);
            }
            if (!trim(pending).empty()) {
                auto row = parse_row(pending, pending_line);
                if (!row.empty()) block.rows.push_back({pending_line, std::move(row)});
            }
            out.matrices[field] = std::move(block);
        } else if (!rhs.empty() && (std::isdigit(static_cast<unsigned char>(rhs.front())) || rhs.front() == '-' ||
                                    rhs.front() == '.' || rhs.front() == '+')) {
            if (rhs.back() == ';') rhs.remove_suffix(1);
            out.scalars[field] = parse_number(trim(rhs), line_no);
        } else {
            // strings (mpc.version = '2') and anything else we do not model
            if (field != "version") log().warn("ignoring MATPOWER field mpc.{}", field);
            // skip the remainder of a multi-line non-matrix value
        }
    }
    return out;
}

void require_columns(const Row& row, std::size_t n, const char* what) {
    if (row.values.size() < n) {
        throw ParseError(row.line, std::string(what) + " row has " + std::to_string(row.values.size()) +
                                       " columns, need at least " + std::to_string(n));
    }
}

int as_int(double v, int line) {
    if (v != std::floor(v)) throw ParseError(line, "expected integer, got " + std::to_string(v));
    return static_cast<int>(v);
}

}  // namespace

std::string_view to_string(BusKind kind) {
    switch (kind) {
        case BusKind::PQ: return "PQ";
        case BusKind::PV: return "PV";
        case BusKind::REF: return "REF";
    }
    return "?";
}

BusKind bus_kind_from_string(std::string_view text) {
    if (text == "PQ") return BusKind::PQ;
    if (text == "PV") return BusKind::PV;
    if (text == "REF") return BusKind::REF;
    throw ValidationError("unknown bus kind '" + std::string(text) + "'");
}

std::size_t GridCase::bus_index(int id) const {
    auto it = std::lower_bound(buses.begin(), buses.end(), id, [](const Bus& b, int v) { return b.id < v; });
    if (it == buses.end() || it->id != id) throw ValidationError("no bus with id " + std::to_string(id));
    return static_cast<std::size_t>(it - buses.begin());
}

std::size_t GridCase::ref_index() const {
    for (std::size_t k = 0; k < buses.size(); ++k)
        if (buses[k].kind == BusKind::REF) return k;
    throw ValidationError("case has no REF bus");
}

std::vector<Violation> validate(const GridCase& grid) {
    std::vector<Violation> out;
    if (grid.buses.size() < 2) out.push_back({"case", "needs at least 2 buses"});
    if (!(grid.base_mva > 0.0)) out.push_back({"case", "base_mva must be positive"});

    std::map<int, BusKind> kinds;
    int n_ref = 0;
    for (const auto& bus : grid.buses) {
        const std::string name = "bus " + std::to_string(bus.id);
        if (!kinds.emplace(bus.id, bus.kind).second) out.push_back({name, "duplicate bus id"});
        if (bus.kind == BusKind::REF) ++n_ref;
        if (!(bus.v_min > 0.0)) out.push_back({name, "v_min must be positive"});
        if (bus.v_min > bus.v_max) out.push_back({name, "v_min exceeds v_max"});
    }
    if (!std::is_sorted(grid.buses.begin(), grid.buses.end(),
                        [](const Bus& a, const Bus& b) { return a.id < b.id; }))
        out.push_back({"case", "buses not sorted by id"});
    if (n_ref != 1) out.push_back({"case", "expected exactly one REF bus, found " + std::to_string(n_ref)});

    for (std::size_t k = 0; k < grid.branches.size(); ++k) {
        const auto& br = grid.branches[k];
        const std::string name =
            "branch " + std::to_string(k + 1) + " (" + std::to_string(br.from_bus) + "-" + std::to_string(br.to_bus) + ")";
        if (!kinds.contains(br.from_bus) || !kinds.contains(br.to_bus))
            out.push_back({name, "references a nonexistent bus"});
        if (br.status && br.r * br.r + br.x * br.x <= 0.0) out.push_back({name, "zero series impedance"});
        if (!(br.tap > 0.0)) out.push_back({name, "tap ratio must be positive"});
    }
    for (std::size_t k = 0; k < grid.generators.size(); ++k) {
        const auto& gen = grid.generators[k];
        const std::string name = "generator " + std::to_string(k + 1) + " (bus " + std::to_string(gen.bus) + ")";
        auto it = kinds.find(gen.bus);
        if (it == kinds.end()) {
            out.push_back({name, "references a nonexistent bus"});
        } else if (it->second == BusKind::PQ && gen.status) {
            out.push_back({name, "in-service generator at a PQ bus"});
        }
        if (gen.p_min > gen.p_max) out.push_back({name, "p_min exceeds p_max"});
        if (gen.q_min > gen.q_max) out.push_back({name, "q_min exceeds q_max"});
    }
    return out;
}

void require_valid(const GridCase& grid) {
    const auto violations = validate(grid);
    if (violations.empty()) return;
    std::ostringstream msg;
    msg << "invalid case '" << grid.name << "':";
    for (const auto& v : violations) msg << " [" << v.element << ": " << v.message << "]";
    throw ValidationError(msg.str());
}

GridCase parse_matpower(std::string_view text, std::string name) {
    const auto parsed = scan(text);
    GridCase grid;
    grid.name = parsed.function_name.empty() ? std::move(name) : parsed.function_name;

    auto base = parsed.scalars.find("baseMVA");
    if (base == parsed.scalars.end()) throw ParseError(0, "missing mpc.baseMVA");
    grid.base_mva = base->second;
    for (const char* required : {"bus", "gen", "branch"})
        if (!parsed.matrices.contains(required)) throw ParseError(0, std::string("missing mpc.") + required);
    for (const auto& [field, block] : parsed.matrices)
        if (field != "bus" && field != "gen" && field != "branch")
            log().warn("ignoring MATPOWER matrix mpc.{} ({} rows)", field, block.rows.size());

    const double s = grid.base_mva;
    for (const auto& row : parsed.matrices.at("bus").rows) {
        require_columns(row, 13, "bus");
        const auto& v = row.values;
        Bus bus;
        bus.id = as_int(v[0], row.line);
        switch (as_int(v[1], row.line)) {
            case 1: bus.kind = BusKind::PQ; break;
            case 2: bus.kind = BusKind::PV; break;
            case 3: bus.kind = BusKind::REF; break;
            default: throw ParseError(row.line, "unsupported bus type " + std::to_string(v[1]));
        }
        bus.pd = v[2] / s;
        bus.qd = v[3] / s;
        bus.gs = v[4] / s;
        bus.bs = v[5] / s;
        bus.base_kv = v[9];
        bus.v_max = v[11];
        bus.v_min = v[12];
        grid.buses.push_back(bus);
    }
    for (const auto& row : parsed.matrices.at("gen").rows) {
        require_columns(row, 10, "gen");
        const auto& v = row.values;
        Generator gen;
        gen.bus = as_int(v[0], row.line);
        gen.pg = v[1] / s;
        gen.q_max = v[3] / s;
        gen.q_min = v[4] / s;
        gen.vg = v[5];
        gen.status = v[7] > 0.0;
        gen.p_max = v[8] / s;
        gen.p_min = v[9] / s;
        grid.generators.push_back(gen);
    }
    for (const auto& row : parsed.matrices.at("branch").rows) {
        require_columns(row, 11, "branch");
        const auto& v = row.values;
        Branch br;
        br.from_bus = as_int(v[0], row.line);
        br.to_bus = as_int(v[1], row.line);
        br.r = v[2];
        br.x = v[3];
        br.b_charging = v[4];
        br.rate_a = v[5] / s;
        br.tap = v[8] == 0.0 ? 1.0 : v[8];
        br.shift = v[9] * kDegToRad;
        br.status = v[10] > 0.0;
        grid.branches.push_back(br);
    }

    // Duplicate ids must be reported before sorting hides their order.
    std::stable_sort(grid.buses.begin(), grid.buses.end(), [](const Bus& a, const Bus& b) { return a.id < b.id; });
    require_valid(grid);
    return grid;
}

nlohmann::json to_json(const GridCase& grid) {
    nlohmann::json buses = nlohmann::json::array();
    for (const auto& b : grid.buses) {
        buses.push_back({{"id", b.id},
                         {"kind", to_string(b.kind)},
                         {"base_kv", b.base_kv},
                         {"v_min", b.v_min},
                         {"v_max", b.v_max},
                         {"gs", b.gs},
                         {"bs", b.bs},
                         {"pd", b.pd},
                         {"qd", b.qd}});
    }
    nlohmann::json branches = nlohmann::json::array();
    for (const auto& br : grid.branches) {
        branches.push_back({{"from_bus", br.from_bus},
                            {"to_bus", br.to_bus},
                            {"r", br.r},
                            {"x", br.x},
                            {"b_charging", br.b_charging},
                            {"tap", br.tap},
                            {"shift", br.shift},
                            {"rate_a", br.rate_a},
                            {"status", br.status}});
    }
    nlohmann::json gens = nlohmann::json::array();
    for (const auto& g : grid.generators) {
        gens.push_back({{"bus", g.bus},
                        {"pg", g.pg},
                        {"p_min", g.p_min},
                        {"p_max", g.p_max},
                        {"q_min", g.q_min},
                        {"q_max", g.q_max},
                        {"vg", g.vg},
                        {"status", g.status}});
    }
    return {{"name", grid.name},
            {"base_mva", grid.base_mva},
            {"buses", std::move(buses)},
            {"branches", std::move(branches)},
            {"generators", std::move(gens)}};
}

GridCase grid_case_from_json(const nlohmann::json& j) {
    GridCase grid;
    try {
        grid.name = j.value("name", std::string("case"));
        grid.base_mva = j.at("base_mva").get<double>();
        for (const auto& b : j.at("buses")) {
            Bus bus;
            bus.id = b.at("id").get<int>();
            bus.kind = bus_kind_from_string(b.at("kind").get<std::string>());
            bus.base_kv = b.at("base_kv").get<double>();
            bus.v_min = b.at("v_min").get<double>();
            bus.v_max = b.at("v_max").get<double>();
            bus.gs = b.at("gs").get<double>();
            bus.bs = b.at("bs").get<double>();
            bus.pd = b.at("pd").get<double>();
            bus.qd = b.at("qd").get<double>();
            grid.buses.push_back(bus);
        }
        for (const auto& b : j.at("branches")) {
            Branch br;
            br.from_bus = b.at("from_bus").get<int>();
            br.to_bus = b.at("to_bus").get<int>();
            br.r = b.at("r").get<double>();
            br.x = b.at("x").get<double>();
            br.b_charging = b.at("b_charging").get<double>();
            br.tap = b.at("tap").get<double>();
            br.shift = b.at("shift").get<double>();
            br.rate_a = b.value("rate_a", 0.0);
            br.status = b.at("status").get<bool>();
            grid.branches.push_back(br);
        }
        for (const auto& g : j.at("generators")) {
            Generator gen;
            gen.bus = g.at("bus").get<int>();
            gen.pg = g.value("pg", 0.0);
            gen.p_min = g.at("p_min").get<double>();
            gen.p_max = g.at("p_max").get<double>();
            gen.q_min = g.at("q_min").get<double>();
            gen.q_max = g.at("q_max").get<double>();
            gen.vg = g.at("vg").get<double>();
            gen.status = g.at("status").get<bool>();
            grid.generators.push_back(gen);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed JSON case: ") + e.what());
    }
    require_valid(grid);
    return grid;
}

GridCase load_case(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open case file " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    if (path.extension() == ".m") return parse_matpower(buffer.str(), path.stem().string());
    try {
        return grid_case_from_json(nlohmann::json::parse(buffer.str()));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(0, std::string("JSON case: ") + e.what());
    }
}

void save_case_json(const GridCase& grid, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << to_json(grid).dump(2) << '\n';
}

}  // namespace acpf_adv
