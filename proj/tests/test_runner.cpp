#include "branchlab/error.hpp"
#include "branchlab/runner.hpp"
#include "branchlab/scenario.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace branchlab;

namespace {

std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "branchlab_runner_test" / name;
    std::filesystem::remove_all(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Scenario small_doublewell() {
    return parse_scenario(R"({"name":"small","geometry":{"n_points":128},"builtin":{"v":"sin2"},
        "tgrid":{"t_min":0,"t_max":6,"base_steps":30},"track":{"k":4},
        "diagnostics":{"tn_count":4}})");
}

}  // namespace

TEST(Run, ConstantScenarioIsExact) {
    const Scenario s = parse_scenario(R"({"geometry":{"n_points":256},"builtin":{"v":"const:1"},
        "tgrid":{"t_min":0,"t_max":20,"base_steps":40},"track":{"k":6}})");
    const RunOutcome o = execute(s);
    ASSERT_TRUE(o.complete) << o.error;
    EXPECT_EQ(o.exit_code(), 0) << o.summary;
    for (const auto& r : o.reports) {
        EXPECT_NEAR(r.fit.mu, 1.0, 1e-6);
        EXPECT_NEAR(r.fit.omega, 0.0, 1e-6);
        EXPECT_TRUE(r.monotonicity.violations.empty());
    }
}

TEST(Run, WritesArtifacts) {
    const auto dir = scratch("artifacts");
    const RunOutcome o = run(small_doublewell(), dir);
    ASSERT_TRUE(o.complete) << o.error;
    const std::string csv = slurp(dir / "branches.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')),
              "branch,t,lambda,lambda_dot_hf,scaled_energy,laplace_energy,residual,step_quality");
    EXPECT_EQ(csv.find('\r'), std::string::npos);
    const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
    EXPECT_TRUE(report["complete"].get<bool>());
    EXPECT_EQ(report["branches"].size(), 4u);
    EXPECT_TRUE(report["branches"][0].contains("mu"));
    EXPECT_FALSE(slurp(dir / "summary.txt").empty());
}

TEST(Run, DeterministicAndGaugeInvariant) {
    const Scenario s = small_doublewell();
    const RunOutcome a = execute(s);
    const RunOutcome b = execute(s);
    EXPECT_EQ(a.branches_csv, b.branches_csv);
    EXPECT_EQ(a.report.dump(), b.report.dump());
    for (std::uint64_t seed : {1u, 2u, 99u}) {
        const RunOutcome f = execute(s, RunOptions{false, seed});
        EXPECT_EQ(a.report.dump(), f.report.dump()) << seed;
        EXPECT_EQ(a.branches_csv, f.branches_csv) << seed;
    }
}

TEST(Run, AbortedRunWritesPartialReport) {
    Scenario s = parse_scenario(R"({"geometry":{"n_points":16},"table":{"path":"nowhere.csv"},
        "tgrid":{"t_min":0,"t_max":2,"base_steps":8}})");
    const auto dir = scratch("aborted");
    const RunOutcome o = run(s, dir);
    EXPECT_FALSE(o.complete);
    EXPECT_EQ(o.exit_code(), 2);
    const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
    EXPECT_FALSE(report["complete"].get<bool>());
    EXPECT_TRUE(report["error"].is_string());
}

TEST(Run, StrictPromotesReportedChecks) {
    const Scenario s = small_doublewell();
    const RunOutcome relaxed = execute(s);
    const RunOutcome strict = execute(s, RunOptions{true, std::nullopt});
    auto find = [](const RunOutcome& o, const std::string& name) {
        for (const auto& v : o.invariants)
            if (v.name == name) return v;
        return InvariantVerdict{};
    };
    EXPECT_FALSE(find(relaxed, "conjecture_gap").asserted);
    EXPECT_TRUE(find(strict, "conjecture_gap").asserted);
    EXPECT_TRUE(find(strict, "equivalence_bounded").asserted);
}

TEST(Sweep, EmptyValuesRejected) {
    EXPECT_THROW(sweep(small_doublewell(), "n_points", {}, scratch("empty")), PreconditionError);
    EXPECT_THROW(sweep(small_doublewell(), "tau", {0.5}, scratch("bad")), PreconditionError);
}

TEST(Sweep, TwoTmaxRows) {
    const auto dir = scratch("tmax");
    const SweepResult r = sweep(small_doublewell(), "t_max", {4, 6}, dir);
    ASSERT_EQ(r.rows.size(), 2u);
    for (const auto& row : r.rows) {
        EXPECT_NE(row.status, "failed") << row.error;
        EXPECT_TRUE(row.ground_fit.has_value());
    }
    const std::string csv = slurp(dir / "sweep.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "t_max,status,mu,omega,fit_residual");
    EXPECT_TRUE(std::filesystem::exists(dir / "t_max-4" / "report.json"));
}

TEST(Sweep, FailedRowDoesNotStopSweep) {
    const auto dir = scratch("failing");
    const SweepResult r = sweep(small_doublewell(), "n_points", {4, 128}, dir);
    ASSERT_EQ(r.rows.size(), 2u);
    EXPECT_EQ(r.rows[0].status, "failed");
    EXPECT_NE(r.rows[1].status, "failed");
    EXPECT_NE(r.exit_code(), 0);
}
