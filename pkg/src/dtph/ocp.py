"""Energy-optimal transition problems in discrete time.

minimize   sum_k  h u_k^T (output_k)
subject to x_{k+1} = step(x_k, u_k),  x_0 = x0,  x_N = xN,  u_min <= u_k <= u_max

The inputs are the only decision variables (single shooting). Gradients
come from a backward adjoint sweep through :func:`dtph.stepper.step_jacobians`;
the terminal equality is handled by an augmented Lagrangian around
L-BFGS-B, which keeps the box bounds explicit.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .core import _as_state, dissipation_root, structure_pair
from .errors import NoFeasibleGridPoint, PhaseMismatch, ValidationError
from .stepper import Scheme, _require_quadratic, simulate, step_jacobians, step_jacobians_batch

log = logging.getLogger(__name__)

CONVERGED = "Converged"
MAXITER = "MaxIter"
INFEASIBLE = "Infeasible"

DEFAULT_BOUND = 50.0
ESCAPE_FACTOR = 10.0


@dataclass
class SolverOptions:
    terminal_tol: float = 1e-10
    kkt_tol: float = 1e-9
    accept_tol: float = 1e-6
    polish_switch: float = 1e-7
    max_outer: int = 12
    penalty: float = 1.0
    penalty_factor: float = 10.0
    inner_maxiter: int = 20000
    n_starts: int | None = None
    seed: int = 0


@dataclass
class OCProblem:
    sys: object
    N: int
    x0: np.ndarray
    xN: np.ndarray
    scheme: Scheme = Scheme.DDR
    h: float = 1.0
    u_min: np.ndarray | None = None
    u_max: np.ndarray | None = None
    options: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        m = self.sys.m
        self.scheme = Scheme.parse(self.scheme)
        self.N = int(self.N)
        if self.N < 1:
            raise ValidationError(f"horizon N must be >= 1, got {self.N}")
        if not self.h > 0:
            raise ValidationError(f"step size must be positive, got {self.h}")
        self.x0 = _as_state(self.x0, self.sys.n).copy()
        self.xN = _as_state(self.xN, self.sys.n).copy()
        lo = -DEFAULT_BOUND if self.u_min is None else self.u_min
        hi = DEFAULT_BOUND if self.u_max is None else self.u_max
        self.u_min = np.broadcast_to(np.asarray(lo, dtype=float), (m,)).copy()
        self.u_max = np.broadcast_to(np.asarray(hi, dtype=float), (m,)).copy()
        if np.any(self.u_min > self.u_max):
            raise ValidationError("u_min must not exceed u_max")

    def with_horizon(self, N):
        return OCProblem(self.sys, N, self.x0, self.xN, self.scheme, self.h,
                         self.u_min, self.u_max, self.options)

    def with_endpoints(self, x0, xN, N):
        return OCProblem(self.sys, N, x0, xN, self.scheme, self.h,
                         self.u_min, self.u_max, self.options)


@dataclass
class OCPSolution:
    trajectory: object
    cost: float
    terminal_defect: float
    kkt_residual: float
    status: str
    multipliers: np.ndarray
    outer_iterations: int = 0
    start: str = ""

    @property
    def inputs(self):
        return self.trajectory.inputs

    def summary(self):
        return {
            "status": self.status,
            "cost": self.cost,
            "terminal_defect": self.terminal_defect,
            "kkt_residual": self.kkt_residual,
            "N": int(self.trajectory.N),
            "scheme": self.trajectory.scheme.value,
            "h": self.trajectory.h,
            "outer_iterations": self.outer_iterations,
            "start": self.start,
            "multipliers": [float(v) for v in self.multipliers],
        }


def stage_cost(sys, x, u, scheme, h=1.0):
    """Supplied energy ``h u^T (output)`` of one step of ``scheme``."""
    from .stepper import step
    return step(sys, x, u, scheme, h).supplied


class _LinearStage:
    """Constant step data of a linear system: ``x+ = A x + Bd u``, ``l = u^T Lux x + 1/2 u^T Luu u``."""

    def __init__(self, sys, scheme, h):
        x = np.zeros(sys.n)
        pair = structure_pair(sys, x, h)
        A = pair.solve(pair.jplus)
        QB = sys.Q @ sys.B
        if scheme is Scheme.MIDPOINT:
            Jinv = pair.solve(np.eye(sys.n))
            self.Bd = h * pair.solve(sys.B)
            self.Lux = h * QB.T @ Jinv
            K = QB.T @ Jinv @ sys.B
            self.Luu = h * h * 0.5 * (K + K.T)
        else:
            self.Bd = h * sys.B
            self.Lux = h * QB.T @ A
            self.Luu = h * h * sys.B.T @ QB
        self.A = A


class Transcription:
    """Single-shooting view of an :class:`OCProblem` over the stacked inputs."""

    def __init__(self, problem):
        self.problem = problem
        self.sys = problem.sys
        self.N = problem.N
        self.m = self.sys.m
        self.dim = self.N * self.m
        self.lower = np.tile(problem.u_min, self.N)
        self.upper = np.tile(problem.u_max, self.N)
        self._lin = _LinearStage(self.sys, problem.scheme, problem.h) if self.sys.is_linear else None
        if problem.scheme is Scheme.DDR:
            _require_quadratic(self.sys)
        self._batched = self.sys.J.vectorized and self.sys.R.vectorized

    def _inputs(self, u):
        return np.asarray(u, dtype=float).reshape(self.N, self.m)

    def simulate(self, u):
        p = self.problem
        return simulate(self.sys, p.x0, self._inputs(u), p.scheme, p.h)

    def _forward(self, U, keep):
        """Roll out the states; the tape is the state sequence (or per-step Jacobians)."""
        p = self.problem
        sys, h = self.sys, p.h
        x = p.x0.copy()
        cost = 0.0
        lin = self._lin
        if lin is not None:
            tape = []
            for k in range(self.N):
                uk = U[k]
                cost += uk @ (lin.Lux @ x) + 0.5 * uk @ (lin.Luu @ uk)
                if keep:
                    tape.append(x)
                x = lin.A @ x + lin.Bd @ uk
            return cost, x, tape
        if not self._batched:
            tape = []
            for k in range(self.N):
                sj = step_jacobians(sys, x, U[k], p.scheme, h)
                cost += sj.cost
                tape.append(sj)
                x = sj.x_next
            return cost, x, tape
        # derivatives come later in one batched call; here only states and cost
        B, QB = sys.B, sys.Q @ sys.B
        X = np.empty((self.N + 1, sys.n))
        X[0] = x
        midpoint = p.scheme is Scheme.MIDPOINT
        for k in range(self.N):
            uk = U[k]
            pair = structure_pair(sys, x, h)
            if midpoint:
                s = pair.solve(2.0 * x + h * (B @ uk))
                cost += 0.5 * h * uk @ (QB.T @ s)
                x = s - x
            else:
                xa = 2.0 * pair.solve(x) - x
                hBu = h * (B @ uk)
                cost += uk @ (QB.T @ xa) * h + 0.5 * h * (hBu @ QB @ uk)
                x = xa + hBu
            X[k + 1] = x
        return cost, x, X

    def objective(self, u):
        cost, _, _ = self._forward(self._inputs(u), keep=False)
        return cost

    def terminal_residual(self, u):
        _, xN, _ = self._forward(self._inputs(u), keep=False)
        return xN - self.problem.xN

    def evaluate(self, u, weight=None):
        """Cost, terminal residual ``c`` and the gradient of ``cost + weight^T x_N``.

        ``weight`` may be a callable of ``c`` (as in the augmented Lagrangian).
        """
        U = self._inputs(u)
        cost, xN, tape = self._forward(U, keep=True)
        c = xN - self.problem.xN
        if callable(weight):
            weight = weight(c)
        p = np.zeros(self.sys.n) if weight is None else np.asarray(weight, dtype=float).copy()
        grad = np.empty((self.N, self.m))
        lin = self._lin
        if lin is None and self._batched:
            tape = step_jacobians_batch(self.sys, tape[:-1], U, self.problem.scheme, self.problem.h)
            for k in range(self.N - 1, -1, -1):
                grad[k] = tape.lu[k] + tape.fu[k].T @ p
                p = tape.lx[k] + tape.fx[k].T @ p
            return cost, c, grad.ravel()
        for k in range(self.N - 1, -1, -1):
            if lin is not None:
                uk = U[k]
                grad[k] = lin.Lux @ tape[k] + lin.Luu @ uk + lin.Bd.T @ p
                p = lin.Lux.T @ uk + lin.A.T @ p
            else:
                sj = tape[k]
                grad[k] = sj.lu + sj.fu.T @ p
                p = sj.lx + sj.fx.T @ p
        return cost, c, grad.ravel()

    def gradient(self, u):
        return self.evaluate(u)[2]


def _projected_gradient(u, g, lo, hi):
    return float(np.max(np.abs(u - np.clip(u - g, lo, hi)))) if u.size else 0.0


def _constraint_jacobian(tr, u, g0):
    rows = []
    for i in range(tr.sys.n):
        e = np.zeros(tr.sys.n)
        e[i] = 1.0
        rows.append(tr.evaluate(u, weight=e)[2] - g0)
    return np.array(rows)


def _newton_polish(tr, u, lam, opts, iters=8):
    """Newton steps on the KKT conditions restricted to the free inputs.

    The Lagrangian Hessian is formed by central differences of the adjoint
    gradient; singular KKT matrices (non-unique minimizers) get the
    minimum-norm step.
    """
    lo, hi = tr.lower, tr.upper

    def measure(v, mult):
        cost, c, g = tr.evaluate(v, weight=mult)
        return max(_projected_gradient(v, g, lo, hi), float(np.linalg.norm(c))), cost, c, g

    merit, cost, c, g = measure(u, lam)
    for _ in range(iters):
        if merit <= min(opts.terminal_tol, opts.kkt_tol):
            break
        free = ~(((u <= lo) & (g > 0)) | ((u >= hi) & (g < 0)))
        idx = np.flatnonzero(free)
        if idx.size == 0:
            break
        g0 = tr.evaluate(u)[2]
        Jc = _constraint_jacobian(tr, u, g0)[:, idx]
        H = np.empty((idx.size, idx.size))
        for col, j in enumerate(idx):
            d = 1e-4 * max(1.0, abs(u[j]))
            up, dn = u.copy(), u.copy()
            up[j] += d
            dn[j] -= d
            H[:, col] = (tr.evaluate(up, weight=lam)[2][idx] - tr.evaluate(dn, weight=lam)[2][idx]) / (2 * d)
        H = 0.5 * (H + H.T)
        n = Jc.shape[0]
        K = np.block([[H, Jc.T], [Jc, np.zeros((n, n))]])
        rhs = -np.concatenate([g[idx], c])
        step = np.linalg.lstsq(K, rhs, rcond=1e-13)[0]
        t = 1.0
        improved = False
        while t > 1e-3:
            v = u.copy()
            v[idx] = np.clip(u[idx] + t * step[: idx.size], lo[idx], hi[idx])
            mult = lam + t * step[idx.size:]
            m2, cost2, c2, g2 = measure(v, mult)
            if m2 < merit and cost2 <= cost + max(merit, 1e-12):
                improved = True
                break
            t *= 0.5
        if not improved:
            break
        u, lam, merit, cost, c, g = v, mult, m2, cost2, c2, g2
    return u, lam


def _solve_from(tr, u0, opts):
    """Augmented Lagrangian loop from one starting point, then a KKT polish."""
    n = tr.sys.n
    lam = np.zeros(n)
    mu = opts.penalty
    u = np.clip(np.asarray(u0, dtype=float), tr.lower, tr.upper)
    bounds = list(zip(tr.lower, tr.upper))
    defects = []
    status = None
    outer = 0
    last_kkt = np.inf

    gtol = 1e-4
    for outer in range(1, opts.max_outer + 1):
        def fun(v, lam=lam, mu=mu):
            cost, c, g = tr.evaluate(v, weight=lambda c: lam + mu * c)
            return cost + lam @ c + 0.5 * mu * c @ c, g

        # inexact inner solves: the stationarity target follows the defect down
        res = scipy.optimize.minimize(
            fun, u, jac=True, method="L-BFGS-B", bounds=bounds,
            options={"maxiter": opts.inner_maxiter, "maxfun": 4 * opts.inner_maxiter,
                     "ftol": 1e-15, "gtol": gtol, "maxcor": 30},
        )
        u = np.clip(res.x, tr.lower, tr.upper)
        c = tr.terminal_residual(u)
        lam = lam + mu * c
        _, _, g = tr.evaluate(u, weight=lam)
        kkt = _projected_gradient(u, g, tr.lower, tr.upper)
        defect = float(np.linalg.norm(c))
        log.debug("outer %d: mu=%.1e defect=%.3e kkt=%.3e", outer, mu, defect, kkt)
        if defect <= opts.terminal_tol and (kkt <= opts.kkt_tol or kkt > 0.1 * last_kkt):
            # feasible and the inner solver has stalled; the polish takes over
            break
        if defect <= opts.polish_switch and kkt <= opts.polish_switch:
            break
        last_kkt = kkt
        gtol = max(1e-11, min(gtol, 1e-2 * defect))
        if len(defects) >= 3 and min(defects[-2:] + [defect]) > 1e-4 \
                and min(defects[-2:] + [defect]) >= 0.5 * defects[-3]:
            status = INFEASIBLE
            defects.append(defect)
            break
        if defects and defect > 0.25 * defects[-1] and defect > opts.terminal_tol:
            mu *= opts.penalty_factor
        elif not defects and defect > opts.terminal_tol:
            mu *= opts.penalty_factor
        defects.append(defect)

    if status != INFEASIBLE:
        u, lam = _newton_polish(tr, u, lam, opts)
    _, c, g = tr.evaluate(u, weight=lam)
    kkt = _projected_gradient(u, g, tr.lower, tr.upper)
    defect = float(np.linalg.norm(c))
    if status != INFEASIBLE:
        status = CONVERGED if defect <= opts.accept_tol and kkt <= opts.accept_tol else MAXITER
    return u, lam, kkt, status, outer


def _rank_key(sol):
    u = sol.inputs.ravel()
    return (sol.status != CONVERGED, sol.cost, float(np.linalg.norm(u)), tuple(u))


def solve(problem, warm_start=None, n_starts=None, seed=None):
    """Solve ``problem`` from several starting points and keep the best solution.

    Start 0 is the zero input, then ``warm_start`` (e.g. from
    :func:`build_turnpike_control`) if given, then uniform random inputs
    drawn from the box clipped to ``[-1, 1]``. Linear systems give a convex
    program and default to a single start.
    """
    opts = problem.options
    tr = Transcription(problem)
    if n_starts is None:
        n_starts = opts.n_starts
    if n_starts is None:
        n_starts = 1 if problem.sys.is_linear else 8
    rng = np.random.default_rng(opts.seed if seed is None else seed)
    starts = [("zero", np.clip(np.zeros(tr.dim), tr.lower, tr.upper))]
    if warm_start is not None:
        starts.append(("turnpike", np.asarray(warm_start, dtype=float).ravel()))
    lo = np.maximum(tr.lower, -1.0)
    hi = np.minimum(tr.upper, 1.0)
    while len(starts) < max(n_starts, 1 if warm_start is None else 2):
        starts.append((f"random{len(starts)}", rng.uniform(lo, hi)))

    best = None
    for label, u0 in starts:
        u, lam, kkt, status, outer = _solve_from(tr, u0, opts)
        traj = tr.simulate(u)
        sol = OCPSolution(traj, traj.cost, float(np.linalg.norm(traj.states[-1] - problem.xN)),
                          kkt, status, lam, outer, label)
        if best is None or _rank_key(sol) < _rank_key(best):
            best = sol
    return best


# Oracle ---------------------------------------------------------------------

def _batch_stepper(sys, scheme, h):
    """Vectorized one-step map and stage cost for states ``X`` (k, n) and inputs ``U`` (k, m)."""
    B, Q = sys.B, sys.Q
    n = sys.n
    if sys.is_linear:
        lin = _LinearStage(sys, scheme, h)

        def f(X, U):
            Xn = X @ lin.A.T + U @ lin.Bd.T
            cost = (np.einsum("ki,ij,kj->k", U, lin.Lux, X)
                    + 0.5 * np.einsum("ki,ij,kj->k", U, lin.Luu, U))
            return Xn, cost
        return f
    QB = Q @ B
    BQB = B.T @ Q @ B

    def f(X, U):
        Jm = np.eye(n) - 0.5 * h * sys.M(X) @ Q
        if scheme is Scheme.MIDPOINT:
            s = np.linalg.solve(Jm, (2.0 * X + h * U @ B.T)[..., None])[..., 0]
            return s - X, 0.5 * h * np.einsum("ki,ki->k", U, s @ QB)
        w = np.linalg.solve(Jm, X[..., None])[..., 0]
        xa = 2.0 * w - X
        cost = h * np.einsum("ki,ki->k", U, xa @ QB) + 0.5 * h * h * np.einsum("ki,ij,kj->k", U, BQB, U)
        return xa + h * U @ B.T, cost
    return f


def brute_force_oracle(problem, grid_points_per_channel, terminal_tolerance, block=1 << 18):
    """Exhaustive search over a uniform input grid.

    Every sequence in ``grid^(N*m)`` is simulated; among those whose
    terminal defect is within ``terminal_tolerance`` the cheapest wins
    (ties: smaller ``|u|``, then lexicographic ``u``).  Sequences are
    enumerated as an outer prefix times a vectorized inner block of
    trailing steps, so shared prefixes are simulated once.
    """
    G = int(grid_points_per_channel)
    N, m, n = problem.N, problem.sys.m, problem.sys.n
    D = N * m
    if not (np.all(np.isfinite(problem.u_min)) and np.all(np.isfinite(problem.u_max))):
        raise ValidationError("oracle needs finite input bounds")
    if G < 1 or float(G) ** D > 1e7:
        raise ValidationError(f"grid of {G}^{D} sequences exceeds the 1e7 limit")
    grids = [np.linspace(problem.u_min[j], problem.u_max[j], G) for j in range(m)]
    step = _batch_stepper(problem.sys, problem.scheme, problem.h)

    inner = 1
    while inner < N and float(G) ** ((inner + 1) * m) <= block:
        inner += 1
    outer = N - inner
    # all input combinations of the trailing `inner` steps, lexicographic order
    mesh = np.meshgrid(*[grids[d % m] for d in range(inner * m)], indexing="ij")
    U_in = np.stack([g.ravel() for g in mesh], axis=1)  # (G^(inner m), inner m)
    sq_in = np.einsum("kd,kd->k", U_in, U_in)
    lex_in = [U_in[:, d] for d in range(inner * m - 1, -1, -1)]

    best = None
    for prefix in itertools.product(range(G), repeat=outer * m):
        u_pre = np.array([grids[d % m][i] for d, i in enumerate(prefix)])
        x = problem.x0[None, :]
        c_pre = 0.0
        for k in range(outer):
            x, c = step(x, u_pre[None, k * m:(k + 1) * m])
            c_pre += c[0]
        X = np.broadcast_to(x, (U_in.shape[0], n))
        cost = np.full(U_in.shape[0], c_pre)
        for k in range(inner):
            X, c = step(X, U_in[:, k * m:(k + 1) * m])
            cost += c
        defect = np.linalg.norm(X - problem.xN, axis=1)
        ok = np.flatnonzero(defect <= terminal_tolerance)
        if ok.size == 0:
            continue
        norms = np.sqrt(u_pre @ u_pre + sq_in[ok])
        order = np.lexsort([key[ok] for key in lex_in] + [norms, cost[ok]])
        cand = ok[order[0]]
        useq = np.concatenate([u_pre, U_in[cand]])
        key = (cost[cand], norms[order[0]], tuple(useq))
        if best is None or key < best[0]:
            best = (key, useq)
    if best is None:
        raise NoFeasibleGridPoint(
            f"no grid sequence reaches the target within {terminal_tolerance:g}")
    u = best[1]
    traj = simulate(problem.sys, problem.x0, u.reshape(N, m), problem.scheme, problem.h)
    return OCPSolution(traj, traj.cost, float(np.linalg.norm(traj.states[-1] - problem.xN)),
                       float("nan"), CONVERGED, np.zeros(problem.sys.n), 0, "grid")


# Steady states --------------------------------------------------------------

@dataclass
class SteadyState:
    x_bar: np.ndarray
    u_bar: np.ndarray
    cost: float
    residual: float
    dissipation: float
    s_residual: float
    converged: bool = True
    message: str = ""

    @property
    def prop4_gap(self):
        """``|l(x, u) - |R^{1/2} Q J_-^{-1} x|^2|`` (zero for every steady state)."""
        return abs(self.cost - self.dissipation)

    @property
    def in_S(self):
        return self.converged and self.cost <= 1e-12 and self.s_residual <= 1e-8


def _steady_pieces(sys, x, u, h):
    pair = structure_pair(sys, x, h)
    z = sys.Q @ pair.solve(x)  # Q J_-^{-1} x
    residual = float(np.linalg.norm(sys.M(x) @ z + sys.B @ u))
    g = dissipation_root(sys, x) @ z
    s_res = float(np.linalg.norm(sys.B @ u + sys.J(x) @ z))
    return z, residual, float(g @ g), s_res


def _steady_record(sys, x, u, h, converged=True, message=""):
    from .stepper import ddr_step
    cost = ddr_step(sys, x, u, h).supplied / h
    _, residual, diss, s_res = _steady_pieces(sys, x, u, h)
    return SteadyState(np.asarray(x, float), np.asarray(u, float), float(cost), residual, diss, s_res,
                       converged, message)


def steady_state_at(sys, x_bar, h=1.0):
    """Steady input for ``x_bar`` by least squares on ``B u = -(J-R) Q J_-^{-1} x``."""
    x = _as_state(x_bar, sys.n)
    pair = structure_pair(sys, x, h)
    rhs = -sys.M(x) @ sys.Q @ pair.solve(x)
    u = np.linalg.lstsq(sys.B, rhs, rcond=None)[0]
    return _steady_record(sys, x, u, h)


def _steady_globalize(first_order, z0, n, radius):
    """Bounded SQP run that brings a start into a local basin before Newton.

    Plain Newton on the KKT system from an infeasible start can slide along
    the steady set towards infinity when dissipation decays there.
    """
    bounds = [(-radius, radius)] * n + [(None, None)] * (z0.size - n)
    res = scipy.optimize.minimize(
        lambda z: first_order(z)[3], z0, jac=lambda z: first_order(z)[0],
        method="SLSQP", bounds=bounds,
        constraints=[{"type": "eq", "fun": lambda z: first_order(z)[2],
                      "jac": lambda z: first_order(z)[1]}],
        options={"maxiter": 200, "ftol": 1e-14},
    )
    return res.x if np.all(np.isfinite(res.x)) else z0


def steady_state_solve(sys, h=1.0, n_starts=8, seed=0, box=3.0, tol=1e-12, maxiter=100):
    """Local solutions of the steady-state problem from random starts.

    minimize l(x, u) over steady pairs ``x = step_ddr(x, u)`` via Newton's
    method on the KKT system (exact first derivatives, central differences
    for the second). Each start yields one :class:`SteadyState`; failures are
    kept with ``converged=False``. A bounded SQP phase over the search box
    ``|x|_inf <= box`` precedes Newton; points the Newton phase carries
    farther than ``ESCAPE_FACTOR * box`` are flagged as well.
    """
    if not sys.has_quadratic_energy:
        from .errors import NonQuadraticHamiltonian
        raise NonQuadraticHamiltonian("steady-state problem needs quadratic energy")
    n, m = sys.n, sys.m
    rng = np.random.default_rng(seed)

    def first_order(z):
        x, u = z[:n], z[n:]
        sj = step_jacobians(sys, x, u, Scheme.DDR, h)
        grad = np.concatenate([sj.lx, sj.lu]) / h
        Jc = np.hstack([sj.fx - np.eye(n), sj.fu]) / h
        c = (sj.x_next - x) / h
        return grad, Jc, c, sj.cost / h

    def F(z, nu):
        grad, Jc, c, _ = first_order(z)
        return np.concatenate([grad + Jc.T @ nu, c]), Jc

    out = []
    for s in range(n_starts):
        x = rng.uniform(-box, box, size=n)
        z = np.concatenate([x, steady_state_at(sys, x, h).u_bar])
        nu = np.zeros(n)
        converged = False
        msg = ""
        try:
            z = _steady_globalize(first_order, z, n, box)
            grad, Jc, _, _ = first_order(z)
            nu = -np.linalg.lstsq(Jc.T, grad, rcond=None)[0]
            Fz, Jc = F(z, nu)
            for _ in range(maxiter):
                if np.linalg.norm(Fz) <= tol * (1.0 + np.linalg.norm(z)):
                    converged = True
                    break
                K = np.zeros((2 * n + m, 2 * n + m))
                for i in range(n + m):
                    e = np.zeros(n + m)
                    e[i] = 1e-6 * max(1.0, abs(z[i]))
                    K[:, i] = (F(z + e, nu)[0] - F(z - e, nu)[0]) / (2 * e[i])
                K[: n + m, n + m:] = Jc.T
                d = np.linalg.lstsq(K, -Fz, rcond=1e-12)[0]
                t = 1.0
                base = np.linalg.norm(Fz)
                while t > 1e-8:
                    zt, nut = z + t * d[: n + m], nu + t * d[n + m:]
                    Ft, Jt = F(zt, nut)
                    if np.linalg.norm(Ft) < (1 - 1e-4 * t) * base:
                        break
                    t *= 0.5
                else:
                    msg = "line search stalled"
                    break
                z, nu, Fz, Jc = zt, nut, Ft, Jt
            else:
                msg = "iteration limit"
        except (np.linalg.LinAlgError, ArithmeticError) as exc:
            msg = str(exc)
        x, u = z[:n], z[n:]
        rec = _steady_record(sys, x, u, h, converged, msg)
        if converged and rec.residual > 1e-8:
            rec.converged = False
            rec.message = f"steady residual {rec.residual:.3e} too large"
        elif converged and np.max(np.abs(x)) > ESCAPE_FACTOR * box:
            # far-field stationary points of decaying dissipation; round-off
            # there is amplified by |Q x| and they are not what was searched for
            rec.converged = False
            rec.message = f"left the search region (|x|_inf = {np.max(np.abs(x)):.3g})"
        out.append(rec)
    return out


# Turnpike control construction ------------------------------------------------

def build_turnpike_control(problem, u1, u2, steady, tol=1e-8):
    """Three-phase input: reach ``x_bar`` with ``u1``, hold ``u_bar``, leave with ``u2``.

    Raises
    ------
    PhaseMismatch
        If ``u1`` does not steer ``x0`` to ``x_bar`` or ``u2`` does not steer
        ``x_bar`` to ``xN`` (within ``tol``), or the phases do not fit in ``N``.
    """
    m = problem.sys.m
    U1 = np.asarray(u1, dtype=float).reshape(-1, m) if np.size(u1) else np.zeros((0, m))
    U2 = np.asarray(u2, dtype=float).reshape(-1, m) if np.size(u2) else np.zeros((0, m))
    k1, k2 = U1.shape[0], U2.shape[0]
    if problem.N < k1 + k2:
        raise PhaseMismatch(f"horizon {problem.N} shorter than transient phases {k1}+{k2}")
    xbar = np.asarray(steady.x_bar, dtype=float)
    end1 = simulate(problem.sys, problem.x0, U1, problem.scheme, problem.h).states[-1]
    if np.linalg.norm(end1 - xbar) > tol:
        raise PhaseMismatch(f"first phase misses the steady state by {np.linalg.norm(end1 - xbar):.3e}")
    end2 = simulate(problem.sys, xbar, U2, problem.scheme, problem.h).states[-1]
    if np.linalg.norm(end2 - problem.xN) > tol:
        raise PhaseMismatch(f"last phase misses the target by {np.linalg.norm(end2 - problem.xN):.3e}")
    middle = np.tile(np.asarray(steady.u_bar, dtype=float).reshape(1, m), (problem.N - k1 - k2, 1))
    return np.vstack([U1, middle, U2])


def turnpike_warm_start(problem, steady, max_phase=None):
    """Try to build the three-phase input by solving the two transient problems.

    Phase lengths are increased from ``n`` up to ``max_phase`` until both
    short transfers converge. Returns ``(inputs, (k1, k2))`` or ``None``.
    """
    n = problem.sys.n
    if max_phase is None:
        max_phase = 3 * n
    xbar = np.asarray(steady.x_bar, dtype=float)
    phases = []
    for a, b in ((problem.x0, xbar), (xbar, problem.xN)):
        found = None
        for k in range(n, max_phase + 1):
            if 2 * k > problem.N:
                break
            sol = solve(problem.with_endpoints(a, b, k), n_starts=1)
            if sol.status == CONVERGED and sol.terminal_defect <= 1e-9:
                found = sol.inputs
                break
        if found is None:
            return None
        phases.append(found)
    try:
        U = build_turnpike_control(problem, phases[0], phases[1], steady, tol=1e-8)
    except PhaseMismatch:
        return None
    return U, (phases[0].shape[0], phases[1].shape[0])
