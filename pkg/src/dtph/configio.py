"""Problem files in, CSV/JSON out.

Problem file layout (JSON)::

    {
      "system": {"name": "example2"}                       # registry entry
             or {"J": [[...]], "R": [[...]], "Q": [[...]], "B": [[...]]},
      "ocp": {"N": 40, "h": 1.0, "scheme": "ddr", "x0": [...], "xN": [...],
              "u_min": -50, "u_max": 50,
              "solver": {"n_starts": 8, "seed": 0, ...}},
      "diagnostics": {"manifold": {"kind": "auto" | "linear" | "residual", "G": [[...]]},
                      "c_hat": null, "sampling_box": [-3, 3], "n_samples": 10000,
                      "horizons": [20, 40, 80], "warm_start": false,
                      "inputs": [[...]], "seed": 0},
      "output": {"dir": "out"}
    }

Matrix entries of ``J`` and ``R`` may be strings in the expression grammar
of :mod:`dtph.expr` (variables ``x1..xn``, ``norm2(x)`` for the squared
norm). Registry systems supply ``x0``, ``xN`` and bounds when the file omits
them. Every section except ``system`` is optional.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .core import PHSystem, validate_system
from .dissipativity import ManifoldSpec, distances
from .errors import ExpressionError, SchemaError, ValidationError
from .ocp import OCProblem, SolverOptions
from .registry import DEFAULTS, SYSTEMS, get_system
from .stepper import Scheme

_TOP_KEYS = {"system", "ocp", "diagnostics", "output"}
_OCP_KEYS = {"N", "h", "scheme", "x0", "xN", "u_min", "u_max", "solver"}
_DIAG_KEYS = {"manifold", "c_hat", "sampling_box", "n_samples", "horizons", "warm_start", "inputs", "seed"}
_SOLVER_KEYS = {f.name for f in dataclasses.fields(SolverOptions)}


@dataclass
class Diagnostics:
    manifold: dict = field(default_factory=lambda: {"kind": "auto"})
    c_hat: float | None = None
    sampling_box: tuple = (-3.0, 3.0)
    n_samples: int = 10_000
    horizons: list = field(default_factory=lambda: [20, 40, 80])
    warm_start: bool = False
    inputs: np.ndarray | None = None
    seed: int = 0


@dataclass
class Problem:
    """Everything a problem file describes, validated."""

    sys: PHSystem
    ocp: OCProblem
    diagnostics: Diagnostics
    output: dict
    source: dict
    digest: str

    def manifold(self, h=None):
        return build_manifold(self.diagnostics.manifold, self.sys, self.ocp.h if h is None else h,
                              self.diagnostics.c_hat)


# parsing helpers --------------------------------------------------------------

def _expect(cond, path, message):
    if not cond:
        raise SchemaError(path, message)


def _number(value, path):
    _expect(isinstance(value, (int, float)) and not isinstance(value, bool), path, "expected a number")
    _expect(math.isfinite(value), path, "must be finite")
    return float(value)


def _vector(value, path, size=None):
    _expect(isinstance(value, list), path, "expected an array of numbers")
    out = [_number(v, f"{path}[{i}]") for i, v in enumerate(value)]
    if size is not None:
        _expect(len(out) == size, path, f"expected {size} entries, got {len(out)}")
    return np.array(out, dtype=float)


def _matrix(value, path, rows=None, cols=None, allow_expr=False):
    _expect(isinstance(value, list) and value and all(isinstance(r, list) for r in value), path,
            "expected a non-empty array of arrays")
    width = len(value[0])
    for i, row in enumerate(value):
        _expect(len(row) == width, f"{path}[{i}]", f"ragged row: expected {width} entries")
        for j, v in enumerate(row):
            if allow_expr and isinstance(v, str):
                continue
            _number(v, f"{path}[{i}][{j}]")
    if rows is not None:
        _expect(len(value) == rows, path, f"expected {rows} rows, got {len(value)}")
    if cols is not None:
        _expect(width == cols, path, f"expected {cols} columns, got {width}")
    return value


def _keys(tree, allowed, path):
    _expect(isinstance(tree, dict), path or "<root>", "expected an object")
    extra = sorted(set(tree) - allowed)
    if extra:
        raise SchemaError(f"{path}.{extra[0]}" if path else extra[0], "unknown key")


def _system(tree):
    _expect(isinstance(tree, dict), "system", "expected an object")
    if "name" in tree and not any(k in tree for k in ("J", "R", "Q", "B")):
        _keys(tree, {"name", "params"}, "system")
        name = tree["name"]
        _expect(isinstance(name, str) and name in SYSTEMS, "system.name",
                f"unknown system {name!r}; known: {sorted(SYSTEMS)}")
        params = tree.get("params", {})
        _expect(isinstance(params, dict), "system.params", "expected an object")
        for k, v in params.items():
            _number(v, f"system.params.{k}")
        try:
            return get_system(name, **params), DEFAULTS.get(name, {})
        except TypeError as exc:
            raise SchemaError("system.params", str(exc)) from None
    _keys(tree, {"name", "J", "R", "Q", "B"}, "system")
    for key in ("J", "R", "Q", "B"):
        _expect(key in tree, f"system.{key}", "missing")
    Q = _matrix(tree["Q"], "system.Q")
    n = len(Q)
    _matrix(Q, "system.Q", n, n)
    J = _matrix(tree["J"], "system.J", n, n, allow_expr=True)
    R = _matrix(tree["R"], "system.R", n, n, allow_expr=True)
    B = _matrix(tree["B"], "system.B", rows=n)
    name = tree.get("name", "inline")
    _expect(isinstance(name, str), "system.name", "expected a string")
    for key, mat in (("J", J), ("R", R)):
        for i, row in enumerate(mat):
            for j, v in enumerate(row):
                if isinstance(v, str):
                    from .expr import parse_expression
                    try:
                        parse_expression(v, n)
                    except ExpressionError as exc:
                        raise SchemaError(f"system.{key}[{i}][{j}]", str(exc)) from None
    try:
        sys = PHSystem(J, R, Q, B, name=name)
    except ExpressionError as exc:
        raise SchemaError("system", str(exc)) from None
    return sys, {}


def _solver(tree):
    _keys(tree, _SOLVER_KEYS, "ocp.solver")
    kwargs = {}
    for k, v in tree.items():
        if k in ("n_starts", "seed", "max_outer", "inner_maxiter"):
            ok = (v is None and k == "n_starts") or (isinstance(v, int) and not isinstance(v, bool) and v >= 0)
            _expect(ok, f"ocp.solver.{k}", "expected a non-negative integer")
            kwargs[k] = v
        else:
            kwargs[k] = _number(v, f"ocp.solver.{k}")
    return SolverOptions(**kwargs)


def _bound(value, path, m):
    if isinstance(value, list):
        return _vector(value, path, m)
    return np.full(m, _number(value, path))


def _ocp(tree, sys, defaults):
    _keys(tree, _OCP_KEYS, "ocp")
    n, m = sys.n, sys.m
    N = tree.get("N", 20)
    _expect(isinstance(N, int) and not isinstance(N, bool) and N >= 1, "ocp.N", "expected an integer >= 1")
    h = _number(tree.get("h", 1.0), "ocp.h")
    _expect(h > 0, "ocp.h", "must be positive")
    scheme = tree.get("scheme", "ddr")
    try:
        scheme = Scheme.parse(scheme)
    except (ValueError, TypeError):
        raise SchemaError("ocp.scheme", f"expected 'midpoint' or 'ddr', got {scheme!r}") from None
    x0 = _vector(tree.get("x0", defaults.get("x0", [0.0] * n)), "ocp.x0", n)
    xN = _vector(tree.get("xN", defaults.get("xN", [0.0] * n)), "ocp.xN", n)
    lo = _bound(tree.get("u_min", defaults.get("u_min", -50.0)), "ocp.u_min", m)
    hi = _bound(tree.get("u_max", defaults.get("u_max", 50.0)), "ocp.u_max", m)
    _expect(np.all(lo <= hi), "ocp.u_min", "must not exceed u_max")
    opts = _solver(tree.get("solver", {}))
    return OCProblem(sys, N, x0, xN, scheme, h, lo, hi, opts)


def _diagnostics(tree, sys):
    _keys(tree, _DIAG_KEYS, "diagnostics")
    d = Diagnostics()
    if "manifold" in tree:
        spec = tree["manifold"]
        _expect(isinstance(spec, dict), "diagnostics.manifold", "expected an object")
        _keys(spec, {"kind", "G"}, "diagnostics.manifold")
        kind = spec.get("kind", "auto")
        _expect(kind in ("auto", "linear", "residual"), "diagnostics.manifold.kind",
                "expected 'auto', 'linear' or 'residual'")
        if kind == "linear":
            _expect("G" in spec, "diagnostics.manifold.G", "missing")
            _matrix(spec["G"], "diagnostics.manifold.G", cols=sys.n)
        d.manifold = {"kind": kind, **({"G": spec["G"]} if "G" in spec else {})}
    if tree.get("c_hat") is not None:
        d.c_hat = _number(tree["c_hat"], "diagnostics.c_hat")
        _expect(d.c_hat > 0, "diagnostics.c_hat", "must be positive")
    if "sampling_box" in tree:
        box = tree["sampling_box"]
        _expect(isinstance(box, list) and len(box) == 2, "diagnostics.sampling_box", "expected [lower, upper]")
        d.sampling_box = tuple(_vector(b, f"diagnostics.sampling_box[{i}]", sys.n) if isinstance(b, list)
                               else _number(b, f"diagnostics.sampling_box[{i}]") for i, b in enumerate(box))
    if "n_samples" in tree:
        _expect(isinstance(tree["n_samples"], int) and tree["n_samples"] > 0, "diagnostics.n_samples",
                "expected a positive integer")
        d.n_samples = tree["n_samples"]
    if "horizons" in tree:
        hs = tree["horizons"]
        _expect(isinstance(hs, list) and all(isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in hs),
                "diagnostics.horizons", "expected an array of integers >= 1")
        d.horizons = list(hs)
    if "warm_start" in tree:
        _expect(isinstance(tree["warm_start"], bool), "diagnostics.warm_start", "expected true or false")
        d.warm_start = tree["warm_start"]
    if "inputs" in tree:
        d.inputs = np.atleast_2d(np.array(_matrix(tree["inputs"], "diagnostics.inputs", cols=sys.m), dtype=float))
    if "seed" in tree:
        _expect(isinstance(tree["seed"], int) and not isinstance(tree["seed"], bool), "diagnostics.seed",
                "expected an integer")
        d.seed = tree["seed"]
    return d


def build_manifold(config, sys, h, c_hat=None):
    """:class:`ManifoldSpec` from a ``diagnostics.manifold`` entry."""
    kind = (config or {}).get("kind", "auto")
    if kind == "linear":
        spec = ManifoldSpec.linear_kernel(config["G"], sys=sys, h=h)
    elif kind == "residual":
        spec = ManifoldSpec.residual_zero_set(sys, h)
    else:
        spec = ManifoldSpec.for_system(sys, h)
    spec.c_hat = c_hat
    return spec


def parse_problem(tree, validate=True):
    """Build a :class:`Problem` from an already-decoded JSON tree."""
    _keys(tree, _TOP_KEYS, "")
    _expect("system" in tree, "system", "missing")
    sys, defaults = _system(tree["system"])
    if validate:
        validate_system(sys)
    ocp = _ocp(tree.get("ocp", {}), sys, defaults)
    diag = _diagnostics(tree.get("diagnostics", {}), sys)
    out = tree.get("output", {})
    _keys(out, {"dir"}, "output")
    digest = hashlib.sha256(canonical_json(tree).encode()).hexdigest()
    return Problem(sys, ocp, diag, out, tree, digest)


def load_problem(path, validate=True):
    """Read and validate a problem file.

    Raises
    ------
    OSError
        If the file cannot be read.
    SchemaError
        Malformed JSON or a schema violation, with the path of the offending node.
    ValidationError
        If the system violates skew-symmetry of ``J`` or definiteness of ``R``/``Q``.
    """
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        tree = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("<root>", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_problem(tree, validate)


def problem_tree(problem):
    """JSON tree of a problem with an inline constant or expression system."""
    sys = problem.sys
    if sys.name in SYSTEMS and "system" in problem.source and "name" in problem.source["system"] \
            and "J" not in problem.source["system"]:
        system = dict(problem.source["system"])
    else:
        system = {"name": sys.name or "inline"}
        for key in ("J", "R"):
            fld = getattr(sys, key)
            if fld.source is None:
                raise ValidationError(f"{key} is a callable field and cannot be written to a problem file")
            system[key] = fld.source
        system["Q"] = sys.Q.tolist()
        system["B"] = sys.B.tolist()
    ocp = problem.ocp
    opts = dataclasses.asdict(ocp.options)
    tree = {
        "system": system,
        "ocp": {"N": ocp.N, "h": ocp.h, "scheme": ocp.scheme.value, "x0": ocp.x0.tolist(), "xN": ocp.xN.tolist(),
                "u_min": ocp.u_min.tolist(), "u_max": ocp.u_max.tolist(), "solver": opts},
    }
    d = problem.diagnostics
    diag = {"manifold": d.manifold, "c_hat": d.c_hat,
            "sampling_box": [b.tolist() if isinstance(b, np.ndarray) else b for b in d.sampling_box],
            "n_samples": d.n_samples, "horizons": d.horizons, "warm_start": d.warm_start, "seed": d.seed}
    if d.inputs is not None:
        diag["inputs"] = d.inputs.tolist()
    tree["diagnostics"] = diag
    if problem.output:
        tree["output"] = problem.output
    return tree


def write_problem(problem, path):
    _write_text(path, json.dumps(problem_tree(problem), indent=2) + "\n")


# output ---------------------------------------------------------------------

def _fmt(v):
    # repr-free, locale-independent, 17 significant digits
    return format(float(v), ".17g")


def trajectory_table(traj, spec=None):
    """Header and rows of the per-step table (inputs, outputs and costs empty at ``k = N``)."""
    n = traj.states.shape[1]
    m = traj.inputs.shape[1]
    ucols = ["u"] if m == 1 else [f"u_{j + 1}" for j in range(m)]
    ycols = ["Y"] if m == 1 else [f"Y_{j + 1}" for j in range(m)]
    header = ["k"] + [f"x_{i + 1}" for i in range(n)] + ucols + ycols + \
        ["H", "dist_to_manifold", "stage_cost", "energy_residual"]
    dist = distances(spec, traj.states) if spec is not None else np.full(traj.N + 1, np.nan)
    rows = []
    for k in range(traj.N + 1):
        row = [str(k)] + [_fmt(v) for v in traj.states[k]]
        if k < traj.N:
            row += [_fmt(v) for v in traj.inputs[k]] + [_fmt(v) for v in traj.outputs[k]]
        else:
            row += [""] * (2 * m)
        row += [_fmt(traj.energies[k]), "" if math.isnan(dist[k]) else _fmt(dist[k])]
        row += [_fmt(traj.supplied[k]), _fmt(traj.residuals[k])] if k < traj.N else ["", ""]
        rows.append(row)
    return header, rows


def write_trajectory_csv(traj, path, spec=None):
    """One row per ``k = 0..N``; ``dist_to_manifold`` is left empty without a manifold spec."""
    header, rows = trajectory_table(traj, spec)
    lines = [",".join(header)] + [",".join(r) for r in rows]
    _write_text(path, "\n".join(lines) + "\n")


def read_trajectory_csv(path):
    """Columns of a trajectory CSV as float arrays (empty cells become NaN)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = {h: [] for h in header}
        for row in reader:
            for h, v in zip(header, row):
                cols[h].append(float(v) if v != "" else float("nan"))
    return {h: np.array(v) for h, v in cols.items()}


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, Scheme):
        return obj.value
    return obj


def canonical_json(obj):
    """Compact, key-sorted JSON used for hashing."""
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"))


def report_record(report):
    """Plain dict for a report-like object (``as_dict``, an OCP solution, or a dict)."""
    if isinstance(report, dict):
        return report
    if hasattr(report, "as_dict"):
        return report.as_dict()
    if hasattr(report, "summary") and hasattr(report, "trajectory"):
        rec = {"kind": "ocp_solution", **report.summary()}
        rec["inputs"] = report.inputs.tolist()
        rec["final_state"] = report.trajectory.states[-1].tolist()
        return rec
    raise TypeError(f"cannot serialize {type(report).__name__}")


def write_report_json(report, path):
    """Write a report with insertion-ordered keys (stable across runs); non-finite numbers become null."""
    _write_text(path, json.dumps(_plain(report_record(report)), indent=2) + "\n")


def _write_text(path, text):
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
