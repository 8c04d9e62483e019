"""Strict dissipativity and turnpike diagnostics along trajectories.

The checked inequality, per step ``k`` with storage ``S = H``::

    S(x_{k+1}) - S(x_k) <= l(x_k, u_k) - alpha(dist(x_k, M))

with ``alpha(s) = h c^2 s^2``. ``c`` is an empirical lower bound of
``|g(x)| / dist(x, M)``, so verdicts certify the inequality for that
particular ``alpha`` only; every report carries the ``c`` it used.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .core import ROOT_FLOOR, _as_state, linear_residual_matrix, manifold_residual
from .errors import DegenerateSampling, NotApplicable, ValidationError
from .stepper import Scheme, Trajectory, simulate

SLACK_TOL = 1e-9
EXCLUDE_DIST = 1e-8
RANK_RTOL = 1e-10


@dataclass
class ManifoldSpec:
    """Target set ``M`` for distances, plus the residual map ``g`` used to bound them.

    ``kind == "linear"``: ``M = ker G`` and distances are exact projections.
    ``kind == "residual"``: ``M = {x : g(x) = 0}`` for the system's residual
    ``g(x) = R(x)^{1/2} Q J_-(x)^{-1} x``; distances by Gauss-Newton projection.
    """

    kind: str
    G: np.ndarray | None = None
    sys: object = None
    h: float = 1.0
    c_hat: float | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "residual"):
            raise ValueError(f"unknown manifold kind {self.kind!r}")
        if self.kind == "linear":
            self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
            _, s, vt = np.linalg.svd(self.G)
            # round-off in a computed G leaves singular values well above eps * s[0]
            tol = RANK_RTOL * (s[0] if s.size else 0.0)
            self._rows = vt[: int(np.sum(s > max(tol, 1e-300)))]
        elif self.sys is None:
            raise ValueError("residual manifold needs a system")

    @classmethod
    def linear_kernel(cls, G, sys=None, h=1.0):
        return cls("linear", G=G, sys=sys, h=h)

    @classmethod
    def residual_zero_set(cls, sys, h=1.0):
        return cls("residual", sys=sys, h=h)

    @classmethod
    def for_system(cls, sys, h=1.0):
        """Exact kernel for linear systems, a registered normal if the system has one, else the zero set."""
        if sys.is_linear:
            return cls.linear_kernel(linear_residual_matrix(sys, h), sys=sys, h=h)
        normal = sys.meta.get("manifold_normal") if sys.meta else None
        if normal is not None:
            return cls.linear_kernel([normal], sys=sys, h=h)
        return cls.residual_zero_set(sys, h)

    @property
    def n(self):
        return self.G.shape[1] if self.kind == "linear" else self.sys.n

    def residual(self, x):
        if self.sys is not None:
            return manifold_residual(self.sys, x, self.h)
        return self.G @ np.asarray(x, dtype=float)


@dataclass
class Projection:
    point: np.ndarray
    distance: float
    residual_norm: float
    surrogate: bool = False
    iterations: int = 0


def _residual_jacobian(spec, x):
    n = x.size
    cols = []
    for l in range(n):
        d = 1e-6 * max(1.0, abs(x[l]))
        e = np.zeros(n)
        e[l] = d
        cols.append((spec.residual(x + e) - spec.residual(x - e)) / (2 * d))
    return np.array(cols).T


def project(spec, x, maxiter=30, tol=1e-10):
    """Closest point of ``M`` to ``x`` (exact for linear kernels).

    For residual zero sets each Gauss-Newton step projects ``x`` onto the
    linearization ``g(xi) + Dg(xi)(z - xi) = 0``. Strong curvature of ``g``
    can make that iteration cycle or run away; SLSQP on the
    nondegenerate part of the constraint, started from ``x`` and from the
    best iterate, takes over. If both fail, the distance falls
    back to ``|g(x)| / c_hat`` and ``surrogate`` is set.
    """
    x = _as_state(x, spec.n)
    if spec.kind == "linear":
        comp = spec._rows @ x
        point = x - spec._rows.T @ comp
        return Projection(point, float(np.linalg.norm(comp)), float(np.linalg.norm(spec.G @ x)))
    gx = spec.residual(x)
    scale = 1.0 + np.linalg.norm(x)
    if np.linalg.norm(gx) <= tol * scale:
        return Projection(x.copy(), 0.0, float(np.linalg.norm(gx)))
    xi = x.copy()
    r = gx
    best = (np.linalg.norm(gx), x.copy())
    for it in range(1, maxiter + 1):
        D = _residual_jacobian(spec, xi)
        new = x - np.linalg.pinv(D, rcond=1e-8) @ (r + D @ (x - xi))
        if not np.all(np.isfinite(new)):
            break
        step = float(np.linalg.norm(new - xi))
        xi = new
        r = spec.residual(xi)
        rn = np.linalg.norm(r)
        if rn < best[0]:
            best = (rn, xi.copy())
        if rn <= tol * scale and step <= 1e-8 * scale:
            return Projection(xi, float(np.linalg.norm(x - xi)), float(np.linalg.norm(gx)), False, it)
    # g may decay at infinity, so the "best" iterate can be a runaway; also try x itself
    cands = [z for z in (_slsqp_projection(spec, x, start, tol * scale) for start in (x, best[1]))
             if z is not None]
    if cands:
        found = min(cands, key=lambda z: np.linalg.norm(z - x))
        return Projection(found, float(np.linalg.norm(x - found)), float(np.linalg.norm(gx)), False, maxiter)
    c = spec.c_hat if spec.c_hat else 1.0
    return Projection(x.copy(), float(np.linalg.norm(gx)) / c, float(np.linalg.norm(gx)), True, maxiter)


def _slsqp_projection(spec, x, start, tol):
    D = _residual_jacobian(spec, start)
    U, s, _ = np.linalg.svd(D)
    if not s.size or s[0] == 0:
        return None
    Ur = U[:, s > 1e-8 * s[0]]
    res = scipy.optimize.minimize(
        lambda z: 0.5 * np.sum((z - x) ** 2), start, jac=lambda z: z - x, method="SLSQP",
        constraints={"type": "eq", "fun": lambda z: Ur.T @ spec.residual(z)},
        options={"ftol": 1e-14, "maxiter": 200},
    )
    if not np.all(np.isfinite(res.x)) or np.linalg.norm(spec.residual(res.x)) > tol:
        return None
    return res.x


def manifold_distance(spec, x):
    """Euclidean distance from ``x`` to the manifold."""
    return project(spec, x).distance


def distances(spec, states):
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if spec.kind == "linear":
        return np.linalg.norm(states @ spec._rows.T, axis=1)
    return np.array([manifold_distance(spec, x) for x in states])


@dataclass
class ConstantEstimate:
    c_hat: float
    ratio_min: float
    ratio_median: float
    ratio_max: float
    n_valid: int
    n_excluded: int
    singular_value: float | None = None

    def as_dict(self):
        return {
            "c_hat": self.c_hat, "ratio_min": self.ratio_min, "ratio_median": self.ratio_median,
            "ratio_max": self.ratio_max, "n_valid": self.n_valid, "n_excluded": self.n_excluded,
            "singular_value": self.singular_value,
        }


def _batch_residual(spec, states):
    """Row-wise ``g`` for many states at once (same floors as the pointwise version)."""
    if spec.sys is None:
        return states @ spec.G.T
    sys, n = spec.sys, spec.n
    try:
        Jm = np.eye(n) - 0.5 * spec.h * sys.M(states) @ sys.Q
        z = np.linalg.solve(Jm, states[..., None])[..., 0] @ sys.Q.T
    except np.linalg.LinAlgError:
        return np.array([spec.residual(x) for x in states])
    R = sys.R(states)
    w, V = np.linalg.eigh(0.5 * (R + np.swapaxes(R, -1, -2)))
    scale = np.maximum(1.0, np.abs(w).max(axis=-1, keepdims=True))
    w = np.where(w <= ROOT_FLOOR * scale, 0.0, w)
    root = (V * np.sqrt(w)[..., None, :]) @ np.swapaxes(V, -1, -2)
    return (root @ z[..., None])[..., 0]


def residual_ratios(spec, states):
    """``|g(x)| / dist(x, M)`` for the states farther than ``1e-8`` from ``M``."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    d = distances(spec, states)
    keep = d >= EXCLUDE_DIST
    ratios = np.linalg.norm(_batch_residual(spec, states[keep]), axis=1) / d[keep]
    return ratios, int(np.sum(~keep))


def estimate_manifold_constant(spec, box, n_samples=10_000, seed=0):
    """Sampled lower bound ``c`` in ``c * dist(x, M) <= |g(x)|`` over a box.

    ``box`` is a pair ``(lower, upper)`` of scalars or per-coordinate arrays.
    For a linear residual ``g(x) = G x`` the smallest nonzero singular value
    of ``G`` is reported alongside as the exact value.
    """
    lo, hi = (np.broadcast_to(np.asarray(b, dtype=float), (spec.n,)) for b in box)
    rng = np.random.default_rng(seed)
    samples = rng.uniform(lo, hi, size=(int(n_samples), spec.n))
    ratios, excluded = residual_ratios(spec, samples)
    if ratios.size < 10:
        raise DegenerateSampling(f"only {ratios.size} samples off the manifold")
    sigma = None
    G = None
    if spec.sys is None and spec.kind == "linear":
        G = spec.G
    elif spec.sys is not None and spec.sys.is_linear:
        G = linear_residual_matrix(spec.sys, spec.h)
    if G is not None:
        s = np.linalg.svd(G, compute_uv=False)
        s = s[s > max(RANK_RTOL * s.max(initial=0.0), 1e-300)]
        sigma = float(s.min()) if s.size else None
    return ConstantEstimate(float(ratios.min()), float(ratios.min()), float(np.median(ratios)),
                            float(ratios.max()), int(ratios.size), excluded, sigma)


# Dissipation inequality -------------------------------------------------------

@dataclass
class StepRecord:
    k: int
    stage_cost: float
    storage_delta: float
    distance: float
    alpha: float
    slack: float
    cumulative_slack: float
    verdict: str


@dataclass
class DissipationReport:
    steps: list
    c_hat: float
    h: float
    scheme: str
    summed_slack: float
    verdict: str
    alpha: str = "h * c_hat^2 * s^2"

    @property
    def first_violation(self):
        for r in self.steps:
            if r.verdict == "violated":
                return r.k
        return None

    def as_dict(self):
        return {
            "kind": "dissipation_report",
            "verdict": self.verdict,
            "scheme": self.scheme,
            "h": self.h,
            "alpha": self.alpha,
            "c_hat": self.c_hat,
            "summed_slack": self.summed_slack,
            "first_violation": self.first_violation,
            "steps": [vars(r).copy() for r in self.steps],
        }


def dissipation_check(traj, spec, c_hat=None):
    """Evaluate the per-step dissipation inequality with storage ``H`` along ``traj``.

    ``c_hat`` defaults to ``spec.c_hat`` and otherwise to the smallest
    ratio ``|g(x_k)| / dist(x_k, M)`` over the trajectory's own states
    (1.0 when every state lies on ``M``). Violations are findings, not errors.
    """
    X = traj.states
    N = traj.N
    d = distances(spec, X)
    if c_hat is None:
        c_hat = spec.c_hat
    if c_hat is None:
        ratios, _ = residual_ratios(spec, X[:N]) if N else (np.array([]), 0)
        c_hat = float(ratios.min()) if ratios.size else 1.0
    h = traj.h
    steps = []
    cum = 0.0
    for k in range(N):
        ds = float(traj.energies[k + 1] - traj.energies[k])
        alpha = h * c_hat ** 2 * d[k] ** 2
        slack = float(traj.supplied[k] - alpha - ds)
        cum += slack
        steps.append(StepRecord(k, float(traj.supplied[k]), ds, float(d[k]), float(alpha), slack, cum,
                                "satisfied" if slack >= -SLACK_TOL else "violated"))
    verdict = "violated" if any(r.verdict == "violated" for r in steps) else "satisfied"
    return DissipationReport(steps, float(c_hat), h, traj.scheme.value, cum, verdict)


# Midpoint counterexample ------------------------------------------------------

@dataclass
class Counterexample:
    x0: np.ndarray
    xN: np.ndarray
    u: np.ndarray
    cost: float
    energy_change: float
    distance: float
    trajectory: Trajectory
    report: DissipationReport
    manifold: ManifoldSpec
    solver_inputs: np.ndarray | None = None

    def as_dict(self):
        return {
            "kind": "midpoint_counterexample",
            "x0": self.x0.tolist(),
            "xN": self.xN.tolist(),
            "u": self.u.ravel().tolist(),
            "cost": self.cost,
            "energy_change": self.energy_change,
            "distance_x0": self.distance,
            "solver_inputs": None if self.solver_inputs is None else self.solver_inputs.ravel().tolist(),
            "report": self.report.as_dict(),
        }


def prop2_counterexample(sys=None, x0=None, c_hat=1.0, h=1.0, cross_check=True):
    """One-step midpoint transfer ``x0 -> -x0`` that is optimal at zero cost yet violates strict dissipativity.

    With ``x0`` in ``ran B`` but off ``ker R^{1/2} Q J_-^{-1}`` the only
    admissible input solves ``h B u = -2 x0``, which makes the output and
    the dissipated energy vanish. The dissipation inequality at ``k = 0``
    then reads ``0 <= 0 - alpha(dist(x0, M))``.

    Raises
    ------
    NotApplicable
        If ``ran B`` lies inside the kernel (no such ``x0`` exists).
    ValidationError
        If a supplied ``x0`` is not in ``ran B`` or lies on the manifold.
    """
    if sys is None:
        from .registry import scalar_damper
        sys = scalar_damper()
    if not sys.is_linear:
        raise ValidationError("the counterexample construction needs a linear system")
    G = linear_residual_matrix(sys, h)
    B = sys.B
    GB = G @ B
    if np.max(np.abs(GB), initial=0.0) <= 1e-12:
        raise NotApplicable("ran B is contained in ker R^{1/2} Q J_-^{-1}; the condition holds vacuously")
    if x0 is None:
        v = np.linalg.svd(GB)[2][0]
        x0 = B @ v
        nz = np.flatnonzero(np.abs(x0) > 1e-12)
        if x0[nz[0]] < 0:
            x0 = -x0
    x0 = _as_state(x0, sys.n).astype(float)
    coef, *_ = np.linalg.lstsq(B, x0, rcond=None)
    if np.linalg.norm(B @ coef - x0) > 1e-10 * (1.0 + np.linalg.norm(x0)):
        raise ValidationError("x0 must lie in the range of B")
    if np.linalg.norm(G @ x0) <= 1e-12:
        raise ValidationError("x0 must lie off the manifold ker R^{1/2} Q J_-^{-1}")
    u = -2.0 * coef / h
    traj = simulate(sys, x0, u.reshape(1, -1), Scheme.MIDPOINT, h)
    xN = -x0
    if np.linalg.norm(traj.states[-1] - xN) > 1e-10 * (1.0 + np.linalg.norm(x0)):
        raise ArithmeticError("constructed input misses -x0")
    spec = ManifoldSpec.linear_kernel(G, sys=sys, h=h)
    report = dissipation_check(traj, spec, c_hat=c_hat)
    solver_u = None
    if cross_check:
        from .ocp import OCProblem, solve
        bound = max(50.0, 2.0 * float(np.max(np.abs(u))))
        sol = solve(OCProblem(sys, 1, x0, xN, Scheme.MIDPOINT, h, -bound, bound))
        solver_u = sol.inputs.copy()
    return Counterexample(x0, xN, u, traj.cost, float(traj.energies[-1] - traj.energies[0]),
                          float(distances(spec, x0[None])[0]), traj, report, spec, solver_u)


# Turnpike -----------------------------------------------------------------

def sum_turnpike_metric(traj, spec):
    """``sum_{k<N} dist(x_k, M)^2`` for a trajectory; for a bare state array every row counts."""
    if isinstance(traj, Trajectory):
        states = traj.states[: traj.N]
    else:
        states = np.atleast_2d(np.asarray(traj, dtype=float))
    if states.shape[0] == 0:
        return 0.0
    return float(np.sum(distances(spec, states) ** 2))


def middle_third(N):
    """Indices ``ceil(N/3) .. floor(2N/3)`` of the turnpike window."""
    return np.arange(math.ceil(N / 3), (2 * N) // 3 + 1)


@dataclass
class HorizonRecord:
    N: int
    status: str
    cost: float | None = None
    terminal_defect: float | None = None
    metric: float | None = None
    middle_max_distance: float | None = None
    max_distance: float | None = None
    max_state_norm: float | None = None
    warm_start_cost: float | None = None
    warm_start_phases: list | None = None
    error: str | None = None


@dataclass
class TurnpikeScan:
    scheme: str
    distance_x0: float
    horizons: list = field(default_factory=list)
    solutions: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "kind": "turnpike_scan",
            "scheme": self.scheme,
            "distance_x0": self.distance_x0,
            "horizons": [vars(r).copy() for r in self.horizons],
        }


def turnpike_scan(problem, horizons, spec=None, warm_start=False, steady=None):
    """Solve ``problem`` for each horizon and record turnpike statistics.

    With ``warm_start`` the three-phase input through the steady state
    ``steady`` (default: the origin) seeds the solver; its cost is kept as a
    horizon-independent upper bound on the optimal cost.
    """
    from .ocp import solve, steady_state_at, turnpike_warm_start

    if spec is None:
        spec = ManifoldSpec.for_system(problem.sys, problem.h)
    scan = TurnpikeScan(problem.scheme.value, float(distances(spec, problem.x0[None])[0]))
    if warm_start and steady is None:
        steady = steady_state_at(problem.sys, np.zeros(problem.sys.n), problem.h)
    for N in horizons:
        rec = HorizonRecord(int(N), "pending")
        try:
            p = problem.with_horizon(N)
            warm = None
            if warm_start:
                found = turnpike_warm_start(p, steady)
                if found is not None:
                    warm, phases = found
                    rec.warm_start_cost = simulate(p.sys, p.x0, warm, p.scheme, p.h).cost
                    rec.warm_start_phases = list(phases)
            sol = solve(p, warm_start=warm)
            d = distances(spec, sol.trajectory.states)
            rec.status = sol.status
            rec.cost = sol.cost
            rec.terminal_defect = sol.terminal_defect
            rec.metric = sum_turnpike_metric(sol.trajectory, spec)
            rec.middle_max_distance = float(d[middle_third(N)].max())
            rec.max_distance = float(d.max())
            rec.max_state_norm = float(np.linalg.norm(sol.trajectory.states, axis=1).max())
            scan.solutions[int(N)] = sol
        except Exception as exc:  # recorded per horizon, the scan goes on
            rec.status = "Error"
            rec.error = f"{type(exc).__name__}: {exc}"
        scan.horizons.append(rec)
    return scan
