#include "branchlab/scenario.hpp"

#include "branchlab/error.hpp"
#include "branchlab/functions.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace branchlab {

namespace {

using nlohmann::json;

std::string join(const std::string& parent, const std::string& key) {
    return parent.empty() ? key : parent + "." + key;
}

void check_keys(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
    for (const auto& item : obj.items()) {
        if (!allowed.contains(item.key())) {
            throw ScenarioError(join(path, item.key()), "unknown field");
        }
    }
}

const json* find(const json& obj, const std::string& key) {
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

const json& require_object(const json& obj, const std::string& key, const std::string& path) {
    const json* v = find(obj, key);
    if (v == nullptr) throw ScenarioError(path, "missing");
    if (!v->is_object()) throw ScenarioError(path, "expected an object");
    return *v;
}

double number(const json& v, const std::string& path) {
    if (!v.is_number()) throw ScenarioError(path, "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ScenarioError(path, "must be finite");
    return x;
}

long long integer(const json& v, const std::string& path) {
    const double x = number(v, path);
    if (x != std::floor(x) || std::abs(x) > 1e15) throw ScenarioError(path, "expected an integer");
    return static_cast<long long>(x);
}

std::string text(const json& v, const std::string& path) {
    if (!v.is_string()) throw ScenarioError(path, "expected a string");
    return v.get<std::string>();
}

std::string function_expr(const json& v, const std::string& path) {
    std::string expr = text(v, path);
    try {
        (void)ScalarFunction::parse(expr);
    } catch (const PreconditionError& e) {
        throw ScenarioError(path, e.what());
    }
    return expr;
}

std::size_t positive_size(const json& v, const std::string& path, long long minimum) {
    const long long x = integer(v, path);
    if (x < minimum) throw ScenarioError(path, "must be at least " + std::to_string(minimum));
    return static_cast<std::size_t>(x);
}

void validate(const Scenario& s) {
    if (s.n_points < 8) throw ScenarioError("geometry.n_points", "must be at least 8");
    if (s.rank < 1) throw ScenarioError("rank", "must be at least 1");
    if (s.kind == FamilyKind::witten && s.rank != 1) {
        throw ScenarioError("rank", "witten families are rank 1");
    }
    if (s.kind == FamilyKind::matrix2 && s.rank != 2) {
        throw ScenarioError("rank", "matrix2 families are rank 2");
    }
    if (!(s.t_min >= 0.0)) throw ScenarioError("tgrid.t_min", "must be nonnegative");
    if (!(s.t_max > s.t_min)) throw ScenarioError("tgrid.t_max", "must exceed tgrid.t_min");
    if (s.base_steps < 8) throw ScenarioError("tgrid.base_steps", "must be at least 8");
    if (s.min_step && !(*s.min_step > 0.0 && *s.min_step < s.t_max - s.t_min)) {
        throw ScenarioError("track.min_step", "must lie in (0, t_max - t_min)");
    }
    if (s.track.k < 1) throw ScenarioError("track.k", "must be at least 1");
    if (s.track.k > s.n_points * s.rank) {
        throw ScenarioError("track.k", "exceeds the operator dimension " +
                                           std::to_string(s.n_points * s.rank));
    }
    if (!(s.track.tau > 0.0 && s.track.tau < 1.0)) throw ScenarioError("track.tau", "must lie in (0, 1)");
    if (!(s.track.eps_deg > 0.0)) throw ScenarioError("track.eps_deg", "must be positive");
    const auto& d = s.diagnostics;
    if (!(d.tail_fraction > 0.0 && d.tail_fraction <= 0.5)) {
        throw ScenarioError("diagnostics.tail_fraction", "must lie in (0, 0.5]");
    }
    if (d.radii.empty()) throw ScenarioError("diagnostics.radii", "must not be empty");
    for (double r : d.radii) {
        if (!(r > 0.0)) throw ScenarioError("diagnostics.radii", "radii must be positive");
    }
    if (d.tn_count < 1) throw ScenarioError("diagnostics.tn_count", "must be at least 1");
    for (int order : d.sobolev_orders) {
        if (order < 1) throw ScenarioError("diagnostics.sobolev_orders", "orders must be at least 1");
    }
    if (!(d.t_floor > 0.0)) throw ScenarioError("diagnostics.t_floor", "must be positive");
    if (!(d.points_per_well > 0.0)) throw ScenarioError("diagnostics.points_per_well", "must be positive");
}

Scenario parse_document(const json& doc, const std::filesystem::path& base_dir) {
    if (!doc.is_object()) throw ScenarioError("$", "scenario must be a JSON object");
    check_keys(doc, "", {"name", "geometry", "rank", "builtin", "witten", "matrix2", "table",
                         "tgrid", "track", "diagnostics"});
    Scenario s;
    s.base_dir = base_dir;
    if (const json* v = find(doc, "name")) s.name = text(*v, "name");

    const json& geometry = require_object(doc, "geometry", "geometry");
    check_keys(geometry, "geometry", {"n_points"});
    const json* n = find(geometry, "n_points");
    if (n == nullptr) throw ScenarioError("geometry.n_points", "missing");
    s.n_points = positive_size(*n, "geometry.n_points", 8);

    int families = 0;
    for (const char* key : {"builtin", "witten", "matrix2", "table"}) families += doc.contains(key) ? 1 : 0;
    if (families != 1) {
        throw ScenarioError("family", "exactly one of builtin, witten, matrix2, table is required");
    }
    std::optional<std::size_t> default_rank;
    if (doc.contains("builtin")) {
        s.kind = FamilyKind::builtin;
        const json& b = require_object(doc, "builtin", "builtin");
        check_keys(b, "builtin", {"v", "a"});
        const json* v = find(b, "v");
        if (v == nullptr) throw ScenarioError("builtin.v", "missing");
        s.v = function_expr(*v, "builtin.v");
        if (const json* a = find(b, "a")) s.a = function_expr(*a, "builtin.a");
    } else if (doc.contains("witten")) {
        s.kind = FamilyKind::witten;
        const json& w = require_object(doc, "witten", "witten");
        check_keys(w, "witten", {"f", "degree"});
        const json* f = find(w, "f");
        if (f == nullptr) throw ScenarioError("witten.f", "missing");
        s.f = function_expr(*f, "witten.f");
        if (const json* deg = find(w, "degree")) {
            const long long value = integer(*deg, "witten.degree");
            if (value != 0 && value != 1) throw ScenarioError("witten.degree", "must be 0 or 1");
            s.degree = static_cast<int>(value);
        }
    } else if (doc.contains("matrix2")) {
        s.kind = FamilyKind::matrix2;
        default_rank = 2;
        const json& m = require_object(doc, "matrix2", "matrix2");
        check_keys(m, "matrix2", {"eigenvalues", "rotation_rate", "a"});
        const json* ev = find(m, "eigenvalues");
        if (ev == nullptr) throw ScenarioError("matrix2.eigenvalues", "missing");
        if (!ev->is_array() || ev->size() != 2) {
            throw ScenarioError("matrix2.eigenvalues", "expected two function names");
        }
        for (std::size_t i = 0; i < 2; ++i) {
            s.eigenvalues[i] =
                function_expr((*ev)[i], "matrix2.eigenvalues[" + std::to_string(i) + "]");
        }
        if (const json* r = find(m, "rotation_rate")) {
            s.rotation_rate = number(*r, "matrix2.rotation_rate");
            if (2.0 * s.rotation_rate != std::round(2.0 * s.rotation_rate)) {
                throw ScenarioError("matrix2.rotation_rate",
                                    "must be a multiple of 1/2 for a periodic field");
            }
        }
        if (const json* a = find(m, "a")) s.a = function_expr(*a, "matrix2.a");
    } else {
        s.kind = FamilyKind::table;
        const json& t = require_object(doc, "table", "table");
        check_keys(t, "table", {"path"});
        const json* p = find(t, "path");
        if (p == nullptr) throw ScenarioError("table.path", "missing");
        s.table_path = text(*p, "table.path");
    }
    s.rank = default_rank.value_or(1);
    if (const json* r = find(doc, "rank")) s.rank = positive_size(*r, "rank", 1);

    const json& tgrid = require_object(doc, "tgrid", "tgrid");
    check_keys(tgrid, "tgrid", {"t_min", "t_max", "base_steps"});
    for (const char* key : {"t_min", "t_max", "base_steps"}) {
        if (!tgrid.contains(key)) throw ScenarioError(join("tgrid", key), "missing");
    }
    s.t_min = number(tgrid["t_min"], "tgrid.t_min");
    s.t_max = number(tgrid["t_max"], "tgrid.t_max");
    s.base_steps = positive_size(tgrid["base_steps"], "tgrid.base_steps", 8);

    if (doc.contains("track")) {
        const json& t = require_object(doc, "track", "track");
        check_keys(t, "track", {"k", "tau", "eps_deg", "min_step", "guard"});
        if (const json* v = find(t, "k")) s.track.k = positive_size(*v, "track.k", 1);
        if (const json* v = find(t, "tau")) s.track.tau = number(*v, "track.tau");
        if (const json* v = find(t, "eps_deg")) s.track.eps_deg = number(*v, "track.eps_deg");
        if (const json* v = find(t, "min_step")) s.min_step = number(*v, "track.min_step");
        if (const json* v = find(t, "guard")) s.track.guard = positive_size(*v, "track.guard", 0);
    }

    if (doc.contains("diagnostics")) {
        const json& d = require_object(doc, "diagnostics", "diagnostics");
        check_keys(d, "diagnostics", {"tail_fraction", "radii", "tn_count", "sobolev_orders",
                                      "t_floor", "points_per_well"});
        auto& o = s.diagnostics;
        if (const json* v = find(d, "tail_fraction")) o.tail_fraction = number(*v, "diagnostics.tail_fraction");
        if (const json* v = find(d, "radii")) {
            if (!v->is_array()) throw ScenarioError("diagnostics.radii", "expected an array");
            o.radii.clear();
            for (std::size_t i = 0; i < v->size(); ++i) {
                o.radii.push_back(number((*v)[i], "diagnostics.radii[" + std::to_string(i) + "]"));
            }
        }
        if (const json* v = find(d, "tn_count")) o.tn_count = positive_size(*v, "diagnostics.tn_count", 1);
        if (const json* v = find(d, "sobolev_orders")) {
            if (!v->is_array()) throw ScenarioError("diagnostics.sobolev_orders", "expected an array");
            o.sobolev_orders.clear();
            for (std::size_t i = 0; i < v->size(); ++i) {
                const std::string path = "diagnostics.sobolev_orders[" + std::to_string(i) + "]";
                o.sobolev_orders.push_back(static_cast<int>(positive_size((*v)[i], path, 1)));
            }
        }
        if (const json* v = find(d, "t_floor")) o.t_floor = number(*v, "diagnostics.t_floor");
        if (const json* v = find(d, "points_per_well")) {
            o.points_per_well = number(*v, "diagnostics.points_per_well");
        }
    }
    validate(s);
    return s;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, sep)) {
        const auto b = item.find_first_not_of(" \t\r");
        const auto e = item.find_last_not_of(" \t\r");
        out.push_back(b == std::string::npos ? std::string() : item.substr(b, e - b + 1));
    }
    return out;
}

/// CSV with a header of "v" or "v,a" and one row per grid point.
std::pair<std::vector<double>, std::vector<double>> read_table(const Scenario& s) {
    const std::filesystem::path path = std::filesystem::path(s.table_path).is_absolute()
                                           ? std::filesystem::path(s.table_path)
                                           : s.base_dir / s.table_path;
    std::ifstream in(path);
    if (!in) throw ScenarioError("table.path", "cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ScenarioError("table.path", "empty table");
    const auto header = split(line, ',');
    const bool has_a = header.size() == 2 && header[0] == "v" && header[1] == "a";
    if (!has_a && !(header.size() == 1 && header[0] == "v")) {
        throw ScenarioError("table.path", "header must be \"v\" or \"v,a\"");
    }
    std::vector<double> v, a;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = split(line, ',');
        if (cells.size() != header.size()) {
            throw ScenarioError("table.path", "row " + std::to_string(row) + " has " +
                                                  std::to_string(cells.size()) + " columns");
        }
        try {
            std::size_t used = 0;
            v.push_back(std::stod(cells[0], &used));
            if (used != cells[0].size()) throw std::invalid_argument(cells[0]);
            if (has_a) {
                a.push_back(std::stod(cells[1], &used));
                if (used != cells[1].size()) throw std::invalid_argument(cells[1]);
            }
        } catch (const std::logic_error&) {
            throw ScenarioError("table.path", "row " + std::to_string(row) + " is not numeric");
        }
    }
    if (v.size() != s.n_points) {
        throw ScenarioError("table.path", "has " + std::to_string(v.size()) +
                                              " rows, geometry.n_points is " +
                                              std::to_string(s.n_points));
    }
    if (!has_a) a.assign(v.size(), 0.0);
    return {std::move(v), std::move(a)};
}

std::vector<double> sample_values(const CircleGrid& grid, const std::string& expr) {
    const ScalarFunction f = ScalarFunction::parse(expr);
    std::vector<double> out(grid.n_points);
    for (std::size_t j = 0; j < grid.n_points; ++j) out[j] = f.value(grid.points[j]);
    return out;
}

}  // namespace

Scenario parse_scenario(std::string_view text, const std::filesystem::path& base_dir) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ScenarioError("$", std::string("unparseable document: ") + e.what());
    }
    return parse_document(doc, base_dir);
}

Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ScenarioError("$", "cannot open " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    json doc;
    try {
        doc = json::parse(buffer.str());
    } catch (const json::parse_error& e) {
        throw ScenarioError("$", std::string("unparseable document: ") + e.what());
    }
    Scenario s = parse_document(doc, path.parent_path());
    if (!doc.contains("name")) s.name = path.stem().string();
    return s;
}

void apply_override(Scenario& scenario, std::string_view parameter, double value) {
    auto as_size = [&](const char* field) {
        if (!(value >= 0.0) || value != std::floor(value)) {
            throw ScenarioError(field, "expected a nonnegative integer");
        }
        return static_cast<std::size_t>(value);
    };
    if (parameter == "n_points") {
        scenario.n_points = as_size("geometry.n_points");
    } else if (parameter == "t_max") {
        scenario.t_max = value;
    } else if (parameter == "k") {
        scenario.track.k = as_size("track.k");
    } else {
        throw ScenarioError(std::string(parameter), "not an overridable parameter (n_points, t_max, k)");
    }
    validate(scenario);
}

OperatorFamily build_family(const Scenario& s) {
    const CircleGrid grid = build_circle_grid(s.n_points);
    switch (s.kind) {
        case FamilyKind::builtin: {
            ScalarFunctionSamples v = sample_function(grid, ScalarFunction::parse(s.v));
            MatrixField field_a = scalar_matrix_field(s.rank, sample_values(grid, s.a));
            MatrixField field_v = scalar_matrix_field(s.rank, v.values);
            return make_family(grid, s.rank, std::move(field_a), std::move(field_v), s.name,
                               std::move(v));
        }
        case FamilyKind::witten: {
            OperatorFamily family =
                build_witten_family(grid, sample_function(grid, ScalarFunction::parse(s.f)), s.degree);
            return family;
        }
        case FamilyKind::matrix2: {
            const ScalarFunction e1 = ScalarFunction::parse(s.eigenvalues[0]);
            const ScalarFunction e2 = ScalarFunction::parse(s.eigenvalues[1]);
            const double rate = s.rotation_rate;
            const MatrixField v = sample_matrix_field(grid, 2, [&](double x) {
                const double c = std::cos(rate * x);
                const double sn = std::sin(rate * x);
                Eigen::Matrix2d r;
                r << c, -sn, sn, c;
                const Eigen::Matrix2d d = Eigen::Vector2d(e1.value(x), e2.value(x)).asDiagonal();
                return Eigen::MatrixXd(r * d * r.transpose());
            });
            const auto a = sample_values(grid, s.a);
            return make_family(grid, 2, scalar_matrix_field(2, a), v, s.name);
        }
        case FamilyKind::table: {
            auto [v, a] = read_table(s);
            MatrixField field_a = scalar_matrix_field(s.rank, a);
            MatrixField field_v = scalar_matrix_field(s.rank, v);
            return make_family(grid, s.rank, std::move(field_a), std::move(field_v), s.name,
                               samples_from_table(grid, std::move(v)));
        }
    }
    throw PreconditionError("unknown family kind");
}

TGrid scenario_tgrid(const Scenario& s) {
    return make_tgrid(s.t_min, s.t_max, s.base_steps, s.min_step);
}

std::string_view to_string(FamilyKind kind) {
    switch (kind) {
        case FamilyKind::builtin: return "builtin";
        case FamilyKind::witten: return "witten";
        case FamilyKind::matrix2: return "matrix2";
        case FamilyKind::table: return "table";
    }
    return "unknown";
}

nlohmann::json scenario_to_json(const Scenario& s) {
    json family = {{"kind", to_string(s.kind)}};
    switch (s.kind) {
        case FamilyKind::builtin: family["v"] = s.v; family["a"] = s.a; break;
        case FamilyKind::witten: family["f"] = s.f; family["degree"] = s.degree; break;
        case FamilyKind::matrix2:
            family["eigenvalues"] = s.eigenvalues;
            family["rotation_rate"] = s.rotation_rate;
            family["a"] = s.a;
            break;
        case FamilyKind::table: family["path"] = s.table_path; break;
    }
    const TGrid grid = scenario_tgrid(s);
    return {
        {"name", s.name},
        {"n_points", s.n_points},
        {"rank", s.rank},
        {"family", family},
        {"tgrid", {{"t_min", s.t_min}, {"t_max", s.t_max}, {"base_steps", s.base_steps}}},
        {"track",
         {{"k", s.track.k},
          {"tau", s.track.tau},
          {"eps_deg", s.track.eps_deg},
          {"min_step", grid.min_step},
          {"guard", s.track.guard}}},
        {"diagnostics",
         {{"tail_fraction", s.diagnostics.tail_fraction},
          {"radii", s.diagnostics.radii},
          {"tn_count", s.diagnostics.tn_count},
          {"sobolev_orders", s.diagnostics.sobolev_orders},
          {"t_floor", s.diagnostics.t_floor},
          {"points_per_well", s.diagnostics.points_per_well}}},
    };
}

}  // namespace branchlab
