import hashlib
import json
import subprocess
import sys

import pytest

from dtph.cli import COMMANDS, build_parser, run


def problem_file(tmp_path, tree, name="p.json"):
    path = tmp_path / name
    path.write_text(json.dumps(tree))
    return str(path)


def digests(out):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(out.iterdir())}


EX2_SMALL = {"system": {"name": "example2"},
             "ocp": {"N": 16, "x0": [2, 1], "xN": [1, 1], "solver": {"n_starts": 1}},
             "diagnostics": {"horizons": [16], "n_samples": 200}}
EX1 = {"system": {"name": "example1_standin"}, "ocp": {"N": 20}}


def test_counterexample_defaults(tmp_path, capsys):
    out = tmp_path / "ce"
    assert run(["counterexample", "--out", str(out)]) == 0
    data = json.loads((out / "counterexample.json").read_text())
    assert data["report"]["verdict"] == "violated"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["exit_code"] == 0 and "counterexample.json" in manifest["outputs"]
    assert "verdict=violated" in capsys.readouterr().out


def test_malformed_json(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{\"system\": ")
    assert run(["solve", "--problem", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "invalid input" in capsys.readouterr().err


def test_schema_error_names_node(tmp_path, capsys):
    bad = {"system": {"J": [[0]], "R": [[1]], "Q": [[1]], "B": [[1], [0]]}}
    assert run(["simulate", "--problem", problem_file(tmp_path, bad), "--out", str(tmp_path / "o")]) == 2
    assert "system.B" in capsys.readouterr().err


def test_missing_file(tmp_path):
    assert run(["solve", "--problem", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 4


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run(["counterexample", "--out", str(blocker / "sub")]) == 4


@pytest.mark.parametrize("argv", [["solve", "--bogus"], ["solve", "--problem", "p", "-N", "0"],
                                  ["nothing"], ["scan", "--problem", "p", "--horizons", "a,b"],
                                  ["solve", "--problem", "p", "--scheme", "euler"]])
def test_bad_usage(argv):
    assert run(argv) == 2


def test_help_lists_every_flag(capsys):
    assert run(["solve", "--help"]) == 0
    text = capsys.readouterr().out
    for flag in ("--problem", "--scheme", "-N", "--h", "--horizons", "--seed", "--out", "--grid", "--tolerance"):
        assert flag in text
    assert set(build_parser()._subparsers._group_actions[0].choices) == set(COMMANDS)


def test_oracle_infeasible_is_numeric_failure(tmp_path):
    tree = {"system": {"name": "scalar_damper"}, "ocp": {"N": 2, "x0": [0], "xN": [100], "u_min": -1, "u_max": 1}}
    out = tmp_path / "o"
    assert run(["oracle", "--problem", problem_file(tmp_path, tree), "--out", str(out), "--grid", "5"]) == 3
    assert json.loads((out / "manifest.json").read_text())["exit_code"] == 3


def test_oracle(tmp_path):
    tree = {"system": {"name": "scalar_damper"},
            "ocp": {"N": 1, "x0": [1], "xN": [-1], "scheme": "midpoint", "u_min": -5, "u_max": 5}}
    out = tmp_path / "o"
    assert run(["oracle", "--problem", problem_file(tmp_path, tree), "--out", str(out), "--grid", "11"]) == 0
    data = json.loads((out / "oracle.json").read_text())
    assert data["inputs"] == [[-2.0]] and abs(data["cost"]) <= 1e-12


def test_solver_failure_is_exit_3(tmp_path):
    tree = {"system": {"name": "scalar_damper"}, "ocp": {"N": 2, "x0": [0], "xN": [100], "u_min": -1, "u_max": 1}}
    assert run(["solve", "--problem", problem_file(tmp_path, tree), "--out", str(tmp_path / "o")]) == 3


def test_simulate_with_supplied_inputs(tmp_path):
    tree = {"system": {"name": "scalar_damper"}, "ocp": {"N": 2, "x0": [1], "xN": [0]},
            "diagnostics": {"inputs": [[1], [0]]}}
    out = tmp_path / "o"
    assert run(["simulate", "--problem", problem_file(tmp_path, tree), "--out", str(out)]) == 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert len(lines) == 4
    rec = json.loads((out / "simulation.json").read_text())
    assert rec["final_state"] == pytest.approx([4 / 9], abs=1e-15)


def test_solve_writes_solution(tmp_path):
    out = tmp_path / "o"
    assert run(["solve", "--problem", problem_file(tmp_path, EX2_SMALL), "--out", str(out), "--scheme", "ddr"]) == 0
    sol = json.loads((out / "solution.json").read_text())
    assert sol["status"] == "Converged" and sol["terminal_defect"] <= 1e-8
    header = (out / "trajectory.csv").read_text().splitlines()[0]
    assert "dist_to_manifold" in header


def test_overrides_reach_the_problem(tmp_path):
    out = tmp_path / "o"
    path = problem_file(tmp_path, EX1)
    assert run(["solve", "--problem", path, "--out", str(out), "-N", "7", "--h", "0.5", "--scheme", "midpoint"]) == 0
    sol = json.loads((out / "solution.json").read_text())
    assert sol["N"] == 7 and sol["scheme"] == "midpoint"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["arguments"]["N"] == 7 and manifest["arguments"]["h"] == 0.5


def test_steady(tmp_path):
    out = tmp_path / "o"
    assert run(["steady", "--problem", problem_file(tmp_path, EX1), "--out", str(out)]) == 0
    rec = json.loads((out / "steady_states.json").read_text())
    assert rec["origin"]["in_S"] and rec["origin"]["cost"] == 0.0
    for s in rec["starts"]:
        if s["converged"]:
            assert s["prop4_gap"] <= 1e-10


def test_scan(tmp_path):
    out = tmp_path / "o"
    assert run(["scan", "--problem", problem_file(tmp_path, EX1), "--out", str(out), "--horizons", "10,20"]) == 0
    data = json.loads((out / "scan.json").read_text())
    assert [h["N"] for h in data["horizons"]] == [10, 20]
    assert (out / "trajectory_N10.csv").exists() and (out / "trajectory_N20.csv").exists()


def test_check_on_optimal_trajectory(tmp_path):
    out = tmp_path / "o"
    assert run(["check", "--problem", problem_file(tmp_path, EX1), "--out", str(out)]) == 0
    rec = json.loads((out / "dissipation.json").read_text())
    assert rec["verdict"] == "satisfied" and rec["trajectory_source"] == "optimal control"
    assert "c_hat" in rec["sampled_constant"]


def test_identical_runs_are_byte_identical(tmp_path):
    path = problem_file(tmp_path, EX2_SMALL)
    for cmd in ("solve", "scan", "check"):
        a, b = tmp_path / f"{cmd}_a", tmp_path / f"{cmd}_b"
        assert run([cmd, "--problem", path, "--out", str(a), "--seed", "3"]) == 0
        assert run([cmd, "--problem", path, "--out", str(b), "--seed", "3"]) == 0
        assert digests(a) == digests(b)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "dtph", "counterexample", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert (tmp_path / "manifest.json").exists()
