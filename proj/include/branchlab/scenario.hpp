#pragma once

#include "branchlab/branchtrack.hpp"
#include "branchlab/diagnostics.hpp"
#include "branchlab/operators.hpp"

#include <json.hpp>

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

namespace branchlab {

enum class FamilyKind { builtin, witten, matrix2, table };

/// Declarative description of one experiment. Function fields hold vocabulary
/// strings understood by ScalarFunction::parse.
struct Scenario {
    std::string name = "scenario";
    std::filesystem::path base_dir;  ///< relative table paths resolve against this

    std::size_t n_points = 0;
    std::size_t rank = 1;

    FamilyKind kind = FamilyKind::builtin;
    std::string v = "zero";  ///< builtin potential (times identity)
    std::string a = "zero";  ///< builtin, matrix2: first-order term (times identity)
    std::string f;           ///< witten
    int degree = 0;          ///< witten
    std::array<std::string, 2> eigenvalues;  ///< matrix2
    double rotation_rate = 1.0;              ///< matrix2; twice it must be an integer
    std::string table_path;                  ///< table

    double t_min = 0.0;
    double t_max = 0.0;
    std::size_t base_steps = 0;
    std::optional<double> min_step;

    TrackOptions track;
    DiagnosticsOptions diagnostics;
};

/// Parses and validates a JSON scenario document. Every error is a ScenarioError
/// whose field() names the offending entry, e.g. "tgrid.t_max".
Scenario parse_scenario(std::string_view text, const std::filesystem::path& base_dir = {});

/// Reads `path`; table paths resolve against its directory and the default name
/// is the file stem.
Scenario load_scenario(const std::filesystem::path& path);

/// Applies a command-line override: "n_points", "t_max" or "k". Re-validates.
void apply_override(Scenario& scenario, std::string_view parameter, double value);

OperatorFamily build_family(const Scenario& scenario);

TGrid scenario_tgrid(const Scenario& scenario);

/// The effective (defaulted) configuration, echoed into reports.
nlohmann::json scenario_to_json(const Scenario& scenario);

std::string_view to_string(FamilyKind kind);

}  // namespace branchlab
