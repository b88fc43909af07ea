#pragma once

#include "branchlab/branchtrack.hpp"
#include "branchlab/diagnostics.hpp"
#include "branchlab/operators.hpp"
#include "branchlab/scenario.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace branchlab {

struct RunOptions {
    /// Promote conjecture_gap < 1e-2 and equivalence boundedness to assertions.
    bool strict = false;
    /// Flip the sign of eigenvectors at random nodes before diagnostics.
    std::optional<std::uint64_t> gauge_seed;
};

struct InvariantVerdict {
    std::string name;
    bool asserted = true;
    bool passed = true;
    std::string detail;
};

/// Everything one scenario run produces, in memory.
struct RunOutcome {
    Scenario scenario;
    bool complete = false;
    std::string error;  ///< set when the run aborted
    std::optional<OperatorFamily> family;
    std::optional<BranchSet> set;
    std::optional<FamilyFacts> facts;
    std::vector<DiagnosticsReport> reports;
    std::vector<InvariantVerdict> invariants;
    nlohmann::json report;
    std::string branches_csv;
    std::string summary;

    bool passed() const;
    /// 0 when complete and every asserted invariant holds; 1 on a failed
    /// invariant; 2 when the run aborted.
    int exit_code() const;
};

RunOutcome execute(const Scenario& scenario, const RunOptions& options = {});

/// Writes branches.csv, report.json and summary.txt into `out` (created if needed).
void write_outputs(const RunOutcome& outcome, const std::filesystem::path& out);

RunOutcome run(const Scenario& scenario, const std::filesystem::path& out,
               const RunOptions& options = {});

/// branches.csv content: one row per reported branch and node.
std::string format_branches_csv(const BranchSet& set, const OperatorFamily& family);

/// Reverses the eigenvector sign at pseudo-randomly chosen (branch, node) pairs.
void flip_gauge(BranchSet& set, std::uint64_t seed);

struct SweepRow {
    double value = 0.0;
    std::string status;  ///< "passed", "invariant_failed" or "failed"
    std::optional<MuOmegaFit> ground_fit;
    std::string error;
};

struct SweepResult {
    std::string parameter;
    std::vector<SweepRow> rows;
    std::string csv;

    int exit_code() const;
};

/// Runs `scenario` once per value of `parameter` (n_points, t_max or k), writing
/// each run under out/<parameter>-<value>/ and the comparison table to out/sweep.csv.
SweepResult sweep(const Scenario& scenario, const std::string& parameter,
                  const std::vector<double>& values, const std::filesystem::path& out,
                  const RunOptions& options = {});

}  // namespace branchlab
