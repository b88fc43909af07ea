#include "branchlab/error.hpp"
#include "branchlab/runner.hpp"
#include "branchlab/scenario.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

struct Overrides {
    std::optional<std::size_t> k;
    std::optional<double> t_max;
    std::optional<std::size_t> n;
    bool strict = false;
    std::optional<std::uint64_t> gauge_seed;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--k", o.k, "Number of reported branches");
    cmd->add_option("--t-max", o.t_max, "Upper end of the t-grid");
    cmd->add_option("--n", o.n, "Grid points on the circle");
    cmd->add_flag("--strict", o.strict,
                  "Assert conjecture_gap < 1e-2 and boundedness of the equivalence ratios");
    cmd->add_option("--gauge-seed", o.gauge_seed,
                    "Flip eigenvector signs at random nodes before diagnostics");
}

branchlab::Scenario load(const std::string& path, const Overrides& o) {
    branchlab::Scenario s = branchlab::load_scenario(path);
    if (o.n) branchlab::apply_override(s, "n_points", static_cast<double>(*o.n));
    if (o.t_max) branchlab::apply_override(s, "t_max", *o.t_max);
    if (o.k) branchlab::apply_override(s, "k", static_cast<double>(*o.k));
    return s;
}

std::vector<double> parse_values(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::logic_error&) {
            used = 0;
        }
        if (used != item.size()) throw branchlab::PreconditionError("bad sweep value '" + item + "'");
        out.push_back(v);
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Eigenbranch tracking and semi-classical diagnostics for Delta + tA + t^2 V on the circle"};
    app.require_subcommand(1);

    Overrides run_opts;
    std::string run_scenario, run_out;
    CLI::App* run_cmd = app.add_subcommand("run", "Track one scenario and write its report");
    run_cmd->add_option("--scenario", run_scenario, "Scenario JSON file")->required();
    run_cmd->add_option("--out", run_out, "Output directory")->required();
    add_common(run_cmd, run_opts);

    Overrides sweep_opts;
    std::string sweep_scenario, sweep_out, sweep_param, sweep_values;
    CLI::App* sweep_cmd = app.add_subcommand("sweep", "Run a scenario over several parameter values");
    sweep_cmd->add_option("--scenario", sweep_scenario, "Scenario JSON file")->required();
    sweep_cmd->add_option("--param", sweep_param, "n_points, t_max or k")
        ->required()
        ->check(CLI::IsMember({"n_points", "t_max", "k"}));
    sweep_cmd->add_option("--values", sweep_values, "Comma-separated values")->required();
    sweep_cmd->add_option("--out", sweep_out, "Output directory")->required();
    add_common(sweep_cmd, sweep_opts);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run_cmd) {
            const branchlab::Scenario s = load(run_scenario, run_opts);
            const auto outcome = branchlab::run(s, run_out, {run_opts.strict, run_opts.gauge_seed});
            std::cout << outcome.summary;
            return outcome.exit_code();
        }
        const branchlab::Scenario s = load(sweep_scenario, sweep_opts);
        const std::vector<double> values = parse_values(sweep_values);
        const auto result = branchlab::sweep(s, sweep_param, values, sweep_out,
                                             {sweep_opts.strict, sweep_opts.gauge_seed});
        std::cout << result.csv;
        return result.exit_code();
    } catch (const branchlab::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
