"""End-to-end checks of the branchlab command line: exit codes, artifacts, schema."""

import argparse
import json
import pathlib
import shutil
import subprocess
import sys

import jsonschema

failures = []


def check(cond, what):
    print(("ok   " if cond else "FAIL ") + what)
    if not cond:
        failures.append(what)


def cli(args, *extra):
    return subprocess.run([args.cli, *extra], capture_output=True, text=True)


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--cli", required=True)
    p.add_argument("--scenarios", required=True, type=pathlib.Path)
    p.add_argument("--schema", required=True, type=pathlib.Path)
    p.add_argument("--work", required=True, type=pathlib.Path)
    args = p.parse_args()

    shutil.rmtree(args.work, ignore_errors=True)
    args.work.mkdir(parents=True)
    schema = json.loads(args.schema.read_text())
    jsonschema.Draft202012Validator.check_schema(schema)
    validator = jsonschema.Draft202012Validator(schema)

    def valid(path):
        errors = list(validator.iter_errors(json.loads(path.read_text())))
        for e in errors[:3]:
            print("     ", e.message, list(e.absolute_path))
        return not errors

    # Small but resolved run: n=256 keeps the horizon (25.9) above t_max.
    small = ["--n", "256", "--t-max", "20", "--k", "4"]
    for name in ("constant", "doublewell", "witten-cos-0"):
        out = args.work / name
        r = cli(args, "run", "--scenario", str(args.scenarios / f"{name}.json"), "--out", str(out), *small)
        check(r.returncode == 0, f"{name}: exit 0 (got {r.returncode}) {r.stderr.strip()}")
        for f in ("branches.csv", "report.json", "summary.txt"):
            check((out / f).is_file(), f"{name}: {f} written")
        check(valid(out / "report.json"), f"{name}: report.json matches schema")
        check("verdict: PASSED" in r.stdout, f"{name}: summary printed")

    first = (args.work / "doublewell" / "branches.csv").read_bytes()
    again = args.work / "doublewell-again"
    cli(args, "run", "--scenario", str(args.scenarios / "doublewell.json"), "--out", str(again), *small)
    check(first == (again / "branches.csv").read_bytes(), "repeated run: branches.csv byte-identical")
    check((args.work / "doublewell" / "report.json").read_bytes() == (again / "report.json").read_bytes(),
          "repeated run: report.json byte-identical")
    fuzz = args.work / "doublewell-fuzz"
    cli(args, "run", "--scenario", str(args.scenarios / "doublewell.json"), "--out", str(fuzz), *small,
        "--gauge-seed", "42")
    check((args.work / "doublewell" / "report.json").read_bytes() == (fuzz / "report.json").read_bytes(),
          "gauge seed: report.json identical")

    header = first.decode().splitlines()[0]
    check(header == "branch,t,lambda,lambda_dot_hf,scaled_energy,laplace_energy,residual,step_quality",
          "branches.csv header")

    bad = args.work / "bad.json"
    bad.write_text('{"geometry":{"n_points":64},"builtin":{"v":"sin2"},'
                   '"tgrid":{"t_min":3,"t_max":1,"base_steps":10}}')
    r = cli(args, "run", "--scenario", str(bad), "--out", str(args.work / "bad"))
    check(r.returncode == 2, f"invalid scenario: exit 2 (got {r.returncode})")
    check("tgrid.t_max" in r.stderr, "invalid scenario: field path reported")

    missing = args.work / "missing.json"
    missing.write_text('{"geometry":{"n_points":16},"table":{"path":"nowhere.csv"},'
                       '"tgrid":{"t_min":0,"t_max":2,"base_steps":8}}')
    r = cli(args, "run", "--scenario", str(missing), "--out", str(args.work / "missing"))
    check(r.returncode == 2, f"aborted run: exit 2 (got {r.returncode})")
    partial = args.work / "missing" / "report.json"
    check(partial.is_file() and valid(partial), "aborted run: partial report matches schema")

    r = cli(args, "sweep", "--scenario", str(args.scenarios / "doublewell.json"), "--param", "n_points",
            "--values", "", "--out", str(args.work / "sweep-empty"))
    check(r.returncode == 2, f"sweep with no values rejected (got {r.returncode})")

    out = args.work / "sweep"
    r = cli(args, "sweep", "--scenario", str(args.scenarios / "constant.json"), "--param", "t_max",
            "--values", "10,20", "--out", str(out), "--n", "128")
    check(r.returncode in (0, 1), f"sweep completes (got {r.returncode}) {r.stderr.strip()}")
    rows = (out / "sweep.csv").read_text().splitlines() if (out / "sweep.csv").is_file() else []
    check(len(rows) == 3 and rows[0] == "t_max,status,mu,omega,fit_residual", "sweep.csv has header + 2 rows")
    for v in ("10", "20"):
        check(valid(out / f"t_max-{v}" / "report.json"), f"sweep row t_max={v}: report matches schema")

    print(f"{len(failures)} failure(s)")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
