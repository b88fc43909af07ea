#include "branchlab/runner.hpp"

#include "branchlab/eigensolve.hpp"
#include "branchlab/error.hpp"
#include "branchlab/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

namespace branchlab {

namespace {

using nlohmann::json;

std::string fmt(const char* format, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, format, x);
    return buf;
}

std::string g17(double x) { return fmt("%.17g", x); }
std::string g6(double x) { return fmt("%.6g", x); }

json series_json(const Series& s) {
    json t = json::array(), v = json::array();
    for (const auto& sample : s) {
        t.push_back(sample.t);
        v.push_back(sample.value);
    }
    return {{"t", t}, {"values", v}};
}

json tail_json(const TailStatistic& s) {
    return {{"max", s.max}, {"min", s.min}, {"last", s.last}};
}

json fit_json(const MuOmegaFit& f) {
    return {{"mu", f.mu},       {"omega", f.omega}, {"c", f.c},
            {"fit_residual", f.fit_residual}, {"samples", f.samples},
            {"t_lo", f.t_lo},   {"t_hi", f.t_hi}};
}

json branch_json(const DiagnosticsReport& r) {
    json violations = json::array();
    for (const auto& v : r.monotonicity.violations) {
        violations.push_back({{"t", v.t}, {"magnitude", v.magnitude}});
    }
    json localization = json::array();
    for (const auto& entry : r.localization) {
        localization.push_back({{"radius", entry.radius},
                                {"centers", entry.centers},
                                {"mass_outside", entry.mass_outside}});
    }
    json sobolev = json::array();
    for (const auto& s : r.sobolev) {
        json item = series_json(s.values);
        item["s"] = s.s;
        item["decaying"] = s.decaying;
        sobolev.push_back(item);
    }
    json equivalence = json::object();
    for (const auto& [name, verdict] : r.equivalence) {
        equivalence[name] = {{"tail_max", verdict.tail_max},
                             {"growth_exponent", verdict.growth_exponent},
                             {"unbounded", verdict.unbounded}};
    }
    return {
        {"branch", r.branch},
        {"cluster_tracked", r.cluster_tracked},
        {"valid_window", {r.window.t_lo, r.window.t_hi}},
        {"mu", r.fit.mu},
        {"omega", r.fit.omega},
        {"fit", fit_json(r.fit)},
        {"fit_residual", r.fit.fit_residual},
        {"monotonicity",
         {{"C_used", r.monotonicity.c_used},
          {"steps_checked", r.monotonicity.steps_checked},
          {"violations", violations}}},
        {"tn", r.tn},
        {"laplace_energy_at_tn", r.laplace_at_tn},
        {"potential_residual",
         {{"at_mu", r.potential_residual_at_tn},
          {"at_mu_minus_fit_residual", r.potential_residual_minus},
          {"at_mu_plus_fit_residual", r.potential_residual_plus}}},
        {"gradient_localization", r.gradient_at_tn ? json(*r.gradient_at_tn) : json(nullptr)},
        {"localization", localization},
        {"sobolev", sobolev},
        {"critical_value_gap", r.critical_value_gap ? json(*r.critical_value_gap) : json(nullptr)},
        {"conjecture_gap", r.conjecture_gap},
        {"growth_bound", r.growth_bound},
        {"laplace_energy_min", r.laplace_energy_min},
        {"interpretations",
         {{"potential_expectation", tail_json(r.potential_expectation)},
          {"slope_ratio", tail_json(r.slope_ratio)},
          {"log_slope", tail_json(r.log_slope)},
          {"laplace_energy", tail_json(r.laplace_tail)},
          {"t_inverse_slope", tail_json(r.t_inverse_slope)}}},
        {"equivalence", equivalence},
    };
}

/// Largest deviation of a tail statistic from mu.
double deviation(const TailStatistic& s, double mu) {
    return std::max(std::abs(s.max - mu), std::abs(s.min - mu));
}

void add(std::vector<InvariantVerdict>& out, std::string name, bool asserted, bool passed,
         std::string detail) {
    out.push_back({std::move(name), asserted, passed, std::move(detail)});
}

void tracking_invariants(const BranchSet& set, std::vector<InvariantVerdict>& out) {
    double worst_excess = 0.0;
    double worst_residual = 0.0;
    double scale = 0.0;
    for (std::size_t label = 0; label < set.tracked; ++label) {
        for (const auto& node : set.branch(label)) {
            worst_residual = std::max(worst_residual, node.residual);
            worst_excess = std::max(worst_excess, node.residual / residual_tolerance(node.lambda));
            scale = std::max(scale, std::abs(node.lambda));
        }
    }
    add(out, "snapshot_residuals", true, worst_excess <= 1.0,
        "max residual " + g6(worst_residual) + " (tolerance 1e-8 (1 + |lambda|))");

    const double defect = spectrum_conservation_defect(set);
    add(out, "spectrum_conservation", true, defect <= 1e-10 * (1.0 + scale),
        "max deviation " + g6(defect));

    const double gauge = gauge_defect(set);
    add(out, "gauge_fixed", true, gauge <= 1e-12, "most negative consecutive overlap " + g6(-gauge));

    std::size_t clustered = 0;
    for (std::size_t label = 0; label < set.k; ++label) clustered += set.cluster_tracked[label] ? 1 : 0;
    add(out, "cluster_tracking", false, clustered == 0,
        std::to_string(clustered) + " of " + std::to_string(set.k) +
            " reported branches labeled only up to a degenerate cluster");
}

void diagnostic_invariants(const RunOutcome& o, bool strict, std::vector<InvariantVerdict>& out) {
    const auto& facts = *o.facts;
    const auto& reports = o.reports;

    std::size_t violations = 0, steps = 0;
    for (const auto& r : reports) {
        violations += r.monotonicity.violations.size();
        steps += r.monotonicity.steps_checked;
    }
    add(out, "monotonicity", true, violations == 0,
        std::to_string(violations) + " increases over " + std::to_string(steps) +
            " steps, C = " + g6(facts.c_used));

    double lap_min = std::numeric_limits<double>::infinity();
    for (const auto& r : reports) lap_min = std::min(lap_min, r.laplace_energy_min);
    add(out, "laplace_nonnegativity", true, lap_min >= -1e-10, "min " + g6(lap_min));

    bool growth_ok = true;
    for (const auto& r : reports) growth_ok = growth_ok && std::isfinite(r.growth_bound);
    add(out, "growth_bound_finite", true, growth_ok, "max |lambda| / (1 + t^2) finite on the window");

    if (facts.scalar_potential) {
        bool ok = true;
        double worst = 0.0;
        for (const auto& r : reports) {
            const double allowed = std::max(1e-2, 5.0 * r.fit.fit_residual);
            const double gap = r.critical_value_gap.value_or(std::numeric_limits<double>::infinity());
            ok = ok && gap <= allowed;
            worst = std::max(worst, gap);
        }
        add(out, "critical_value_gap", true, ok, "worst gap " + g6(worst));
    }

    auto interpretation = [&](const DiagnosticsReport& r, double& worst) {
        const double allowed = 10.0 * r.fit.fit_residual + 0.05;
        worst = std::max({deviation(r.potential_expectation, r.fit.mu),
                          deviation(r.slope_ratio, r.fit.mu)});
        return worst <= allowed;
    };
    if (!reports.empty()) {
        double worst = 0.0;
        const bool ok = interpretation(reports.front(), worst);
        add(out, "mu_interpretations_ground", true, ok,
            "<V psi, psi> and lambda'/(2t) within " + g6(worst) + " of mu on the tail");
        bool all_ok = true;
        double all_worst = 0.0;
        for (const auto& r : reports) {
            double w = 0.0;
            all_ok = interpretation(r, w) && all_ok;
            all_worst = std::max(all_worst, w);
        }
        add(out, "mu_interpretations_all", false, all_ok,
            "worst deviation " + g6(all_worst) + " (excited branches carry omega/(2t))");
    }

    double worst_gap = 0.0;
    for (const auto& r : reports) worst_gap = std::max(worst_gap, std::abs(r.conjecture_gap));
    add(out, "conjecture_gap", strict, worst_gap < 1e-2,
        "max |mu - min V| " + g6(worst_gap));

    std::size_t unbounded = 0;
    for (const auto& r : reports) {
        for (const auto& [name, verdict] : r.equivalence) unbounded += verdict.unbounded ? 1 : 0;
    }
    add(out, "equivalence_bounded", strict, unbounded == 0,
        std::to_string(unbounded) + " ratio series flagged unbounded");

    const double horizon = facts.horizon;
    add(out, "validity_horizon", false, o.scenario.t_max <= horizon,
        "t_max " + g6(o.scenario.t_max) + ", horizon " + g6(horizon));
}

json invariants_json(const std::vector<InvariantVerdict>& list) {
    json out = json::array();
    for (const auto& v : list) {
        out.push_back({{"name", v.name}, {"asserted", v.asserted}, {"passed", v.passed},
                       {"detail", v.detail}});
    }
    return out;
}

std::string summary_text(const RunOutcome& o) {
    std::ostringstream s;
    const auto& sc = o.scenario;
    s << "scenario " << sc.name << " (" << to_string(sc.kind) << ", n=" << sc.n_points
      << ", rank " << sc.rank << "), t in [" << g6(sc.t_min) << ", " << g6(sc.t_max)
      << "], k=" << sc.track.k << "\n";
    if (o.facts && !o.reports.empty()) {
        const auto& w = o.reports.front().window;
        s << "validity horizon " << g6(o.facts->horizon) << ", valid window [" << g6(w.t_lo)
          << ", " << g6(w.t_hi) << "], C = " << g6(o.facts->c_used) << "\n";
    }
    for (const auto& r : o.reports) {
        s << "branch " << r.branch << ": mu=" << g6(r.fit.mu) << " omega=" << g6(r.fit.omega)
          << " fit_residual=" << g6(r.fit.fit_residual)
          << (r.cluster_tracked ? " (cluster-tracked)" : "") << "\n";
    }
    for (const auto& v : o.invariants) {
        const char* tag = v.asserted ? (v.passed ? "PASS" : "FAIL") : (v.passed ? "NOTE" : "WARN");
        s << tag << " " << v.name << ": " << v.detail << "\n";
    }
    if (!o.complete) s << "ABORTED: " << o.error << "\n";
    s << "verdict: " << (o.exit_code() == 0 ? "PASSED" : "FAILED") << "\n";
    return s.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    // Written beside the target and renamed so readers never see a partial file.
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out << content;
        if (!out) throw Error("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace

bool RunOutcome::passed() const {
    return complete && std::all_of(invariants.begin(), invariants.end(),
                                   [](const auto& v) { return !v.asserted || v.passed; });
}

int RunOutcome::exit_code() const {
    if (!complete) return 2;
    return passed() ? 0 : 1;
}

std::string format_branches_csv(const BranchSet& set, const OperatorFamily& family) {
    std::string out = "branch,t,lambda,lambda_dot_hf,scaled_energy,laplace_energy,residual,step_quality\n";
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t label = 0; label < set.k; ++label) {
        const auto& branch = set.branch(label);
        for (std::size_t i = 0; i < branch.size(); ++i) {
            const auto& node = branch[i];
            const double t2 = node.t * node.t;
            const double scaled = node.t > 0.0 ? node.lambda / t2 : nan;
            const double laplace =
                node.t > 0.0 ? weighted_quadratic_form(family.laplacian, node.psi, family.weight()) / t2
                             : nan;
            out += std::to_string(label);
            for (double x : {node.t, node.lambda, node.lambda_dot_hf, scaled, laplace,
                             node.residual, set.step_quality[i]}) {
                out += ',';
                out += g17(x);
            }
            out += '\n';
        }
    }
    return out;
}

void flip_gauge(BranchSet& set, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& branch : set.branches) {
        for (auto& node : branch) {
            if (rng() & 1U) node.psi = -node.psi;
        }
    }
}

RunOutcome execute(const Scenario& scenario, const RunOptions& options) {
    RunOutcome o;
    o.scenario = scenario;
    o.report = {{"schema_version", 1}, {"scenario", scenario_to_json(scenario)}};
    try {
        o.family = build_family(scenario);
        const OperatorFamily& family = *o.family;
        o.facts = family_facts(family, scenario.diagnostics);
        o.report["validity_horizon"] = o.facts->horizon;
        o.report["C_used"] = o.facts->c_used;
        o.report["laplacian_min"] = o.facts->laplacian_min;
        o.report["potential_min"] = o.facts->potential_min;
        json critical = json::array();
        for (const auto& c : o.facts->critical) critical.push_back({{"x", c.x}, {"value", c.value}});
        o.report["critical_points"] = critical;

        o.set = track(family, scenario_tgrid(scenario), scenario.track);
        tracking_invariants(*o.set, o.invariants);
        std::size_t refined = 0;
        for (char r : o.set->refined) refined += r ? 1 : 0;
        o.report["tracking"] = {
            {"nodes", o.set->nodes()},
            {"refined_nodes", refined},
            {"snapshots_computed", o.set->snapshots_computed},
            {"min_step_quality",
             o.set->nodes() > 1
                 ? *std::min_element(o.set->step_quality.begin() + 1, o.set->step_quality.end())
                 : 1.0},
        };
        json clustered = json::array();
        for (char c : o.set->cluster_tracked) clustered.push_back(c != 0);
        o.report["tracking"]["cluster_tracked"] = clustered;
        if (options.gauge_seed) flip_gauge(*o.set, *options.gauge_seed);
        o.branches_csv = format_branches_csv(*o.set, family);

        for (std::size_t label = 0; label < o.set->k; ++label) {
            o.reports.push_back(diagnose(family, *o.set, label, *o.facts, scenario.diagnostics));
        }
        json branches = json::array();
        for (const auto& r : o.reports) branches.push_back(branch_json(r));
        o.report["branches"] = branches;
        o.report["conjecture_gap"] = o.reports.front().conjecture_gap;
        diagnostic_invariants(o, options.strict, o.invariants);
        o.complete = true;
    } catch (const std::exception& e) {
        o.error = e.what();
        o.complete = false;
    }
    o.report["complete"] = o.complete;
    o.report["error"] = o.complete ? json(nullptr) : json(o.error);
    o.report["strict"] = options.strict;
    o.report["invariants"] = invariants_json(o.invariants);
    o.report["passed"] = o.exit_code() == 0;
    o.summary = summary_text(o);
    return o;
}

void write_outputs(const RunOutcome& outcome, const std::filesystem::path& out) {
    std::filesystem::create_directories(out);
    if (!outcome.branches_csv.empty()) write_file(out / "branches.csv", outcome.branches_csv);
    write_file(out / "report.json", outcome.report.dump(2) + "\n");
    write_file(out / "summary.txt", outcome.summary);
}

RunOutcome run(const Scenario& scenario, const std::filesystem::path& out,
               const RunOptions& options) {
    RunOutcome outcome = execute(scenario, options);
    write_outputs(outcome, out);
    return outcome;
}

int SweepResult::exit_code() const {
    for (const auto& row : rows) {
        if (row.status == "failed") return 2;
    }
    for (const auto& row : rows) {
        if (row.status != "passed") return 1;
    }
    return 0;
}

SweepResult sweep(const Scenario& scenario, const std::string& parameter,
                  const std::vector<double>& values, const std::filesystem::path& out,
                  const RunOptions& options) {
    if (values.empty()) throw PreconditionError("sweep needs at least one value");
    if (parameter != "n_points" && parameter != "t_max" && parameter != "k") {
        throw PreconditionError("sweep parameter must be n_points, t_max or k, got " + parameter);
    }
    std::filesystem::create_directories(out);
    SweepResult result;
    result.parameter = parameter;
    result.csv = parameter + ",status,mu,omega,fit_residual\n";
    for (double value : values) {
        SweepRow row;
        row.value = value;
        const std::string tag = parameter + "-" + fmt("%.10g", value);
        try {
            Scenario s = scenario;
            apply_override(s, parameter, value);
            const RunOutcome o = run(s, out / tag, options);
            if (!o.reports.empty()) row.ground_fit = o.reports.front().fit;
            row.status = !o.complete ? "failed" : (o.passed() ? "passed" : "invariant_failed");
            row.error = o.error;
        } catch (const std::exception& e) {
            row.status = "failed";
            row.error = e.what();
        }
        const double nan = std::numeric_limits<double>::quiet_NaN();
        result.csv += fmt("%.10g", value) + "," + row.status;
        for (double x : {row.ground_fit ? row.ground_fit->mu : nan,
                         row.ground_fit ? row.ground_fit->omega : nan,
                         row.ground_fit ? row.ground_fit->fit_residual : nan}) {
            result.csv += "," + g17(x);
        }
        result.csv += "\n";
        result.rows.push_back(std::move(row));
    }
    write_file(out / "sweep.csv", result.csv);
    return result;
}

}  // namespace branchlab
