"""One-step maps and trajectory simulation.

Two discrete evolution rules are provided, both with step size ``h``:

midpoint
    ``J_- x+ = J_+ x + h B u`` with output ``y = 1/2 B^T Q J_-^{-1} (2x + h B u)``.
    Energy balance: ``H(x+) - H(x) = h u^T y - h/4 |R^{1/2} Q (x + x+)|^2``.

ddr
    ``x_aut = J_-^{-1} J_+ x`` (autonomous step), ``x+ = x_aut + h B u`` and
    u-average output ``Y = B^T dgH(x_aut, x+)``.
    Energy balance: ``H(x+) - H(x) = h u^T Y - h dgH(x, x_aut)^T R dgH(x, x_aut)``.

``J_-``, ``J_+`` are always evaluated at the current state ``x``.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import _as_state, discrete_gradient, structure_pair
from .errors import NewtonDivergence, NonQuadraticHamiltonian, SingularJacobian, SingularJminus, StepError


class Scheme(str, Enum):
    MIDPOINT = "midpoint"
    DDR = "ddr"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        found = cls._value2member_map_.get(value)
        if found is not None:
            return found
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown scheme {value!r}; expected 'midpoint' or 'ddr'") from None


@dataclass
class StepResult:
    scheme: Scheme
    h: float
    x: np.ndarray
    u: np.ndarray
    x_next: np.ndarray
    x_aut: np.ndarray | None
    output: np.ndarray
    stored_delta: float
    supplied: float
    dissipated: float

    @property
    def stage_cost(self):
        return self.supplied


def _as_input(u, m):
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (m,):
        raise ValueError(f"expected input of size {m}, got shape {u.shape}")
    return u


def _require_quadratic(sys):
    if not sys.has_quadratic_energy:
        raise NonQuadraticHamiltonian("explicit DDR needs H(x) = 1/2 x^T Q x")


def midpoint_step(sys, x, u, h=1.0):
    x = _as_state(x, sys.n)
    u = _as_input(u, sys.m)
    pair = structure_pair(sys, x, h)
    s = pair.solve(2.0 * x + h * (sys.B @ u))  # x + x_next
    x_next = s - x
    Qs = sys.Q @ s
    y = 0.5 * sys.B.T @ Qs
    H = sys.hamiltonian
    return StepResult(
        Scheme.MIDPOINT, float(h), x, u, x_next, None, y,
        stored_delta=float(H.value(x_next)) - float(H.value(x)),
        supplied=float(h * (u @ y)),
        dissipated=float(0.25 * h * (Qs @ sys.R(x) @ Qs)),
    )


def ddr_autonomous_explicit(sys, x, h=1.0, pair=None):
    """Closed-form autonomous DDR step ``J_-^{-1}(x) J_+(x) x`` (quadratic energy only)."""
    _require_quadratic(sys)
    x = _as_state(x, sys.n)
    if pair is None:
        pair = structure_pair(sys, x, h)
    return pair.solve(pair.jplus @ x)


def ddr_autonomous_implicit(sys, x, h=1.0, x_guess=None, tol=1e-10, maxiter=50):
    """Solve ``z = x + h (J(x) - R(x)) dgH(x, z)`` by Newton's method.

    Works for any Hamiltonian the system carries; for quadratic energy the
    answer coincides with :func:`ddr_autonomous_explicit`.
    """
    x = _as_state(x, sys.n)
    H = sys.hamiltonian
    M = sys.M(x)
    if x_guess is not None:
        z = _as_state(x_guess, sys.n).copy()
    elif sys.has_quadratic_energy:
        z = ddr_autonomous_explicit(sys, x, h)
    else:
        z = x.copy()
    eye = np.eye(sys.n)
    res = np.inf
    for _ in range(maxiter + 1):
        F = z - x - h * M @ discrete_gradient(H, x, z)
        res = float(np.linalg.norm(F))
        if res <= tol:
            return z
        Jac = eye - h * M @ H.discrete_gradient_dw(x, z)
        try:
            dz = np.linalg.solve(Jac, F)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian(f"singular Newton matrix at z={z.tolist()}") from exc
        z = z - dz
        if not np.all(np.isfinite(z)):
            break
    raise NewtonDivergence(f"implicit DDR step did not converge (residual {res:.3e})", residual=res)


def ddr_step(sys, x, u, h=1.0):
    x = _as_state(x, sys.n)
    u = _as_input(u, sys.m)
    _require_quadratic(sys)
    Q = sys.Q
    pair = structure_pair(sys, x, h)
    x_aut = pair.solve(pair.jplus @ x)
    x_next = x_aut + h * (sys.B @ u)
    # quadratic energy: the discrete gradient is Q times the average
    Y = 0.5 * sys.B.T @ (Q @ (x_aut + x_next))
    dg = 0.5 * Q @ (x + x_aut)
    return StepResult(
        Scheme.DDR, float(h), x, u, x_next, x_aut, Y,
        stored_delta=0.5 * float(x_next @ Q @ x_next - x @ Q @ x),
        supplied=float(h * (u @ Y)),
        dissipated=float(h * (dg @ sys.R(x) @ dg)),
    )


def step(sys, x, u, scheme, h=1.0):
    scheme = Scheme.parse(scheme)
    if scheme is Scheme.MIDPOINT:
        return midpoint_step(sys, x, u, h)
    return ddr_step(sys, x, u, h)


def energy_balance_residual(sys, result):
    """``|H(x+) - H(x) - supplied + dissipated|`` recomputed from the stored states."""
    H = sys.hamiltonian
    delta = float(H.value(result.x_next) - H.value(result.x))
    return abs(delta - result.supplied + result.dissipated)


@dataclass
class BatchStepResult:
    """Independent one-step results for ``k`` (state, input, step size) triples."""

    scheme: Scheme
    h: np.ndarray
    x: np.ndarray
    u: np.ndarray
    x_next: np.ndarray
    x_aut: np.ndarray | None
    output: np.ndarray
    stored_delta: np.ndarray
    supplied: np.ndarray
    dissipated: np.ndarray


def step_batch(sys, X, U, scheme, h=1.0):
    """Vectorized :func:`step` for quadratic energy.

    ``X`` has shape ``(k, n)``, ``U`` shape ``(k, m)`` and ``h`` is a scalar or
    a length-``k`` array. Each row is an independent step; all ``J_-`` are
    solved in one batched call.
    """
    scheme = Scheme.parse(scheme)
    _require_quadratic(sys)
    X = np.atleast_2d(_as_state(X, sys.n))
    U = np.asarray(U, dtype=float).reshape(X.shape[0], sys.m)
    h = np.broadcast_to(np.asarray(h, dtype=float), X.shape[:1])
    if not np.all(h > 0):
        raise ValueError("step sizes must be positive")
    Q, B = sys.Q, sys.B
    R = sys.R(X)
    MQ = 0.5 * h[:, None, None] * (sys.J(X) - R) @ Q
    eye = np.eye(sys.n)
    BU = h[:, None] * (U @ B.T)
    try:
        if scheme is Scheme.MIDPOINT:
            S = np.linalg.solve(eye - MQ, (2.0 * X + BU)[..., None])[..., 0]
        else:
            XA = np.linalg.solve(eye - MQ, ((eye + MQ) @ X[..., None]))[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SingularJminus("J_- is singular for at least one row of the batch") from exc
    if scheme is Scheme.MIDPOINT:
        XA = None
        X_next = S - X
        QS = S @ Q.T
        Y = 0.5 * QS @ B
        dissipated = 0.25 * h * np.einsum("ki,kij,kj->k", QS, R, QS)
    else:
        X_next = XA + BU
        Y = 0.5 * (XA + X_next) @ Q.T @ B
        DG = 0.5 * (X + XA) @ Q.T
        dissipated = h * np.einsum("ki,kij,kj->k", DG, R, DG)
    stored = 0.5 * (np.einsum("ki,ij,kj->k", X_next, Q, X_next) - np.einsum("ki,ij,kj->k", X, Q, X))
    return BatchStepResult(scheme, h.copy(), X, U, X_next, XA, Y, stored,
                           h * np.einsum("ki,ki->k", U, Y), dissipated)


def batch_energy_residuals(sys, result):
    """Row-wise energy balance residuals of a :class:`BatchStepResult`."""
    H = sys.hamiltonian
    delta = H.value(result.x_next) - H.value(result.x)
    return np.abs(delta - result.supplied + result.dissipated)


@dataclass
class Trajectory:
    """States ``x_0..x_N``, inputs ``u_0..u_{N-1}`` and per-step energy terms."""

    states: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray
    energies: np.ndarray
    supplied: np.ndarray
    dissipated: np.ndarray
    residuals: np.ndarray
    scheme: Scheme
    h: float

    @property
    def N(self):
        return self.inputs.shape[0]

    @property
    def stage_costs(self):
        return self.supplied

    @property
    def cost(self):
        return float(np.sum(self.supplied))


def simulate(sys, x0, inputs, scheme=Scheme.DDR, h=1.0):
    """Roll the one-step map of ``scheme`` from ``x0`` under ``inputs`` (shape ``(N, m)``)."""
    scheme = Scheme.parse(scheme)
    x = _as_state(x0, sys.n).copy()
    U = np.asarray(inputs, dtype=float).reshape(-1, sys.m) if np.size(inputs) else np.zeros((0, sys.m))
    if not np.all(np.isfinite(U)):
        raise ValueError("inputs must be finite")
    N = U.shape[0]
    states = np.empty((N + 1, sys.n))
    outputs = np.empty((N, sys.m))
    supplied = np.empty(N)
    dissipated = np.empty(N)
    residuals = np.empty(N)
    states[0] = x
    for k in range(N):
        try:
            r = step(sys, x, U[k], scheme, h)
        except Exception as exc:
            raise StepError(k, exc) from exc
        states[k + 1] = r.x_next
        outputs[k] = r.output
        supplied[k] = r.supplied
        dissipated[k] = r.dissipated
        residuals[k] = energy_balance_residual(sys, r)
        x = r.x_next
    energies = np.asarray(sys.hamiltonian.value(states), dtype=float).reshape(N + 1)
    return Trajectory(states, U.copy(), outputs, energies, supplied, dissipated, residuals, scheme, float(h))


# Derivatives for shooting -----------------------------------------------------

@dataclass
class StepJacobians:
    x_next: np.ndarray
    cost: float
    fx: np.ndarray  # d x_next / d x
    fu: np.ndarray  # d x_next / d u
    lx: np.ndarray  # d cost / d x
    lu: np.ndarray  # d cost / d u


def _dM_contract(sys, x, v):
    """Matrix whose column ``l`` is ``(dM/dx_l) v`` for ``M = J - R``."""
    dJ = sys.J.jacobian(x)
    dR = sys.R.jacobian(x)
    return np.einsum("ijl,j->il", dJ - dR, v)


def step_jacobians(sys, x, u, scheme, h=1.0):
    """One step together with the first derivatives of the map and the stage cost.

    Stage cost is the supplied energy ``h u^T (output)``.
    """
    scheme = Scheme.parse(scheme)
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    B, Q = sys.B, sys.Q
    pair = structure_pair(sys, x, h)
    eye = np.eye(sys.n)
    if scheme is Scheme.MIDPOINT:
        s = pair.solve(2.0 * x + h * (B @ u))
        x_next = s - x
        QB = Q @ B
        cost = 0.5 * h * u @ (QB.T @ s)
        rhs = 2.0 * eye
        if not sys.is_linear:
            rhs = rhs + 0.5 * h * _dM_contract(sys, x, Q @ s)
        sx = pair.solve(rhs)
        su = h * pair.solve(B)
        fx = sx - eye
        fu = su
        w = 0.5 * h * (QB @ u)
        lx = sx.T @ w
        lu = 0.5 * h * (QB.T @ s) + su.T @ w
    else:
        _require_quadratic(sys)
        wv = pair.solve(x)  # J_-^{-1} x
        x_aut = 2.0 * wv - x
        x_next = x_aut + h * (B @ u)
        QB = Q @ B
        cost = h * u @ (QB.T @ x_aut) + 0.5 * h * h * u @ (B.T @ QB @ u)
        rhs = eye
        if not sys.is_linear:
            rhs = rhs + 0.5 * h * _dM_contract(sys, x, Q @ wv)
        fx = 2.0 * pair.solve(rhs) - eye
        fu = h * B
        lx = h * fx.T @ (QB @ u)
        lu = h * (QB.T @ x_aut) + h * h * (B.T @ QB @ u)
    return StepJacobians(x_next, float(cost), fx, fu, lx, lu)


def step_jacobians_batch(sys, X, U, scheme, h=1.0):
    """:func:`step_jacobians` for ``k`` independent steps at once.

    Returns a :class:`StepJacobians` whose fields carry a leading axis of
    length ``k``. Needs fields that evaluate on a batch of states (constant
    or expression entries).
    """
    scheme = Scheme.parse(scheme)
    if not (sys.J.vectorized and sys.R.vectorized):
        raise ValueError("batched Jacobians need constant or expression-valued J and R")
    X = np.atleast_2d(_as_state(X, sys.n))
    U = np.asarray(U, dtype=float).reshape(X.shape[0], sys.m)
    B, Q = sys.B, sys.Q
    n = sys.n
    eye = np.eye(n)
    M = sys.J(X) - sys.R(X)
    Jm = eye - 0.5 * h * M @ Q
    QB = Q @ B
    UQB = U @ QB.T  # rows (Q B u_k)^T

    def contract(V):
        # column l of (dM/dx_l) v, for every row
        if sys.is_linear:
            return 0.0
        dM = sys.J.jacobian(X) - sys.R.jacobian(X)
        return 0.5 * h * np.einsum("kijl,kj->kil", dM, V)

    if scheme is Scheme.MIDPOINT:
        S = np.linalg.solve(Jm, (2.0 * X + h * U @ B.T)[..., None])[..., 0]
        X_next = S - X
        cost = 0.5 * h * np.einsum("ki,ki->k", U, S @ QB)
        SX = np.linalg.solve(Jm, 2.0 * eye + contract(S @ Q.T))
        SU = h * np.linalg.solve(Jm, np.broadcast_to(B, (X.shape[0],) + B.shape))
        w = 0.5 * h * UQB
        lx = np.einsum("kji,kj->ki", SX, w)
        lu = 0.5 * h * (S @ QB) + np.einsum("kji,kj->ki", SU, w)
        return StepJacobians(X_next, cost, SX - eye, SU, lx, lu)
    _require_quadratic(sys)
    WV = np.linalg.solve(Jm, X[..., None])[..., 0]
    XA = 2.0 * WV - X
    X_next = XA + h * U @ B.T
    BQB = B.T @ QB
    cost = h * np.einsum("ki,ki->k", U, XA @ QB) + 0.5 * h * h * np.einsum("ki,ij,kj->k", U, BQB, U)
    fx = 2.0 * np.linalg.solve(Jm, eye + contract(WV @ Q.T)) - eye
    fu = np.broadcast_to(h * B, (X.shape[0],) + B.shape)
    lx = h * np.einsum("kji,kj->ki", fx, UQB)
    lu = h * (XA @ QB) + h * h * U @ BQB.T
    return StepJacobians(X_next, cost, fx, fu, lx, lu)
