"""Port-Hamiltonian system data and the pointwise structure maps.

A system is ``x' = (J(x) - R(x)) Q x + B u`` with quadratic energy
``H(x) = 1/2 x^T Q x``. The discrete-time machinery built on it needs

* the structure pair ``J_-(x) = I - h/2 (J - R) Q`` and ``J_+(x) = 2I - J_-(x)``,
* the symmetric square root of ``R(x)``,
* the residual ``g(x) = R(x)^{1/2} Q J_-(x)^{-1} x`` whose zero set is the
  dissipation-free manifold.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cache, cached_property

import numpy as np
from scipy.linalg.lapack import dgetrf as _getrf
from scipy.linalg.lapack import dgetrs as _getrs

from .errors import (
    DimensionMismatch,
    NonPDQ,
    NonPSDR,
    NonSkewJ,
    QuadratureFailure,
    SingularJminus,
)
from .expr import Node, as_expression, compile_expressions

SKEW_TOL = 1e-12
PSD_TOL = 1e-10
PIVOT_TOL = 1e-14
ROOT_FLOOR = 1e-13
GAUSS_ORDER = 10

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(GAUSS_ORDER)
# map [-1, 1] -> [0, 1]
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


def _as_state(x, n):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (n,):
        raise DimensionMismatch(f"expected state of size {n}, got shape {x.shape}")
    return x


class MatrixField:
    """State-dependent ``n x n`` matrix.

    Three flavours: constant arrays, matrices whose entries are expressions
    in ``x1..xn`` (exact Jacobian by symbolic differentiation), and plain
    callables (Jacobian by central differences unless one is supplied).
    """

    def __init__(self, n, *, value=None, entries=None, func=None, jac=None, source=None):
        self.n = n
        self._value = None if value is None else np.array(value, dtype=float)
        self._entries = entries
        self._func = func
        self._jac = jac
        self.source = source
        if self._entries is not None:
            self._dentries = [[[e.diff(l) for l in range(n)] for e in row] for row in entries]
            self._fvalue = compile_expressions([e for row in entries for e in row])
            self._fjac = compile_expressions([d for row in self._dentries for drow in row for d in drow])

    @classmethod
    def constant(cls, value):
        value = np.atleast_2d(np.asarray(value, dtype=float))
        if value.shape[0] != value.shape[1]:
            raise DimensionMismatch(f"matrix must be square, got {value.shape}")
        return cls(value.shape[0], value=value, source=value.tolist())

    @classmethod
    def from_entries(cls, rows, n=None):
        """Build from nested lists of numbers and/or expression strings."""
        size = len(rows)
        if n is None:
            n = size
        if size != n or any(len(r) != n for r in rows):
            raise DimensionMismatch(f"expected {n}x{n} entries")
        exprs = [[as_expression(v, n) for v in row] for row in rows]
        source = [[v.to_string() if isinstance(v, Node) else v for v in row] for row in rows]
        if not any(e.variables() for row in exprs for e in row):
            return cls.constant([[e.evaluate(np.zeros(n)) for e in row] for row in exprs])
        return cls(n, entries=exprs, source=source)

    @classmethod
    def from_callable(cls, n, func, jac=None):
        return cls(n, func=func, jac=jac)

    @property
    def is_constant(self):
        return self._value is not None

    @property
    def vectorized(self):
        """True when values and Jacobians accept a batch of states."""
        return self._func is None

    def __call__(self, x):
        x = _as_state(x, self.n)
        if self._value is not None:
            if x.ndim == 1:
                return self._value.copy()
            return np.broadcast_to(self._value, x.shape[:-1] + (self.n, self.n)).copy()
        if self._entries is not None:
            return _assemble(self._fvalue(x), x.shape[:-1], (self.n, self.n))
        return np.asarray(self._func(x), dtype=float)

    def jacobian(self, x):
        """Partial derivatives, shape ``(n, n, n)`` with ``[:, :, l] = dM/dx_l``."""
        x = _as_state(x, self.n)
        n = self.n
        if self._value is not None:
            return np.zeros(x.shape[:-1] + (n, n, n))
        if self._entries is not None:
            return _assemble(self._fjac(x), x.shape[:-1], (n, n, n))
        if self._jac is not None:
            return np.asarray(self._jac(x), dtype=float)
        out = np.empty((n, n, n))
        for l in range(n):
            eps = 1e-6 * max(1.0, abs(x[l]))
            e = np.zeros(n)
            e[l] = eps
            out[:, :, l] = (self._func(x + e) - self._func(x - e)) / (2 * eps)
        return out


def _assemble(values, batch, shape):
    out = np.empty(batch + (len(values),))
    for i, v in enumerate(values):
        out[..., i] = v
    return out.reshape(batch + shape)


def _field(value, n=None):
    if isinstance(value, MatrixField):
        return value
    if callable(value):
        if n is None:
            raise ValueError("state dimension required for callable matrix fields")
        return MatrixField.from_callable(n, value)
    arr = np.asarray(value, dtype=object)
    if arr.dtype == object and any(isinstance(v, (str, Node)) for v in arr.ravel()):
        return MatrixField.from_entries([list(r) for r in arr], n)
    return MatrixField.constant(np.asarray(value, dtype=float))


# Hamiltonians -----------------------------------------------------------------

@dataclass(frozen=True)
class QuadraticHamiltonian:
    Q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Q", np.atleast_2d(np.asarray(self.Q, dtype=float)))

    @property
    def n(self):
        return self.Q.shape[0]

    def value(self, x):
        x = _as_state(x, self.n)
        if x.ndim == 1:
            return 0.5 * float(x @ self.Q @ x)
        return 0.5 * np.einsum("...i,ij,...j->...", x, self.Q, x)

    def gradient(self, x):
        return _as_state(x, self.n) @ self.Q.T

    def hessian(self, x):
        return self.Q.copy()

    def discrete_gradient(self, v, w):
        v = _as_state(v, self.n)
        w = _as_state(w, self.n)
        return 0.5 * (v + w) @ self.Q.T

    def discrete_gradient_dw(self, v, w):
        return 0.5 * self.Q


@dataclass(frozen=True)
class ExpressionHamiltonian:
    """Scalar energy given as an expression in ``x1..xn``.

    Gradient and Hessian come from symbolic differentiation of the tree,
    compiled to plain numpy code on first use.
    """

    expr: Node
    n: int

    @classmethod
    def parse(cls, text, n):
        return cls(as_expression(text, n), n)

    @cached_property
    def _grad(self):
        return [self.expr.diff(i) for i in range(self.n)]

    @cached_property
    def _hess(self):
        return [[g.diff(j) for j in range(self.n)] for g in self._grad]

    @cached_property
    def _compiled(self):
        return (compile_expressions([self.expr]), compile_expressions(self._grad),
                compile_expressions([d for row in self._hess for d in row]))

    def value(self, x):
        x = _as_state(x, self.n)
        val = self._compiled[0](x)[0]
        return float(val) if x.ndim == 1 else np.broadcast_to(val, x.shape[:-1]).astype(float)

    def gradient(self, x):
        x = _as_state(x, self.n)
        return _assemble(self._compiled[1](x), x.shape[:-1], (self.n,))

    def hessian(self, x):
        x = _as_state(x, self.n)
        return _assemble(self._compiled[2](x), x.shape[:-1], (self.n, self.n))

    def discrete_gradient(self, v, w):
        v = _as_state(v, self.n)
        w = _as_state(w, self.n)
        d = w - v
        pts = v + _GL_NODES[:, None] * d
        grads = self.gradient(pts)
        dg = _GL_WEIGHTS @ grads
        hv, hw = float(self.value(v)), float(self.value(w))
        resid = abs(d @ dg - (hw - hv))
        if resid > 1e-8 * (1.0 + abs(hv) + abs(hw)):
            raise QuadratureFailure(
                f"secant residual {resid:.3e} exceeds tolerance; expression needs a higher quadrature order"
            )
        return dg

    def discrete_gradient_dw(self, v, w):
        """Derivative of the mean-value discrete gradient in its second argument."""
        v = _as_state(v, self.n)
        w = _as_state(w, self.n)
        pts = v + _GL_NODES[:, None] * (w - v)
        hs = self.hessian(pts)
        return np.einsum("q,q,qij->ij", _GL_WEIGHTS, _GL_NODES, hs)

    def check_gradient(self, x, eps=1e-6):
        """Largest deviation between the symbolic gradient and central differences."""
        x = _as_state(x, self.n).astype(float)
        fd = np.empty(self.n)
        for i in range(self.n):
            e = np.zeros(self.n)
            e[i] = eps
            fd[i] = (self.value(x + e) - self.value(x - e)) / (2 * eps)
        return float(np.max(np.abs(fd - self.gradient(x))))


def hamiltonian(spec, x):
    """Energy ``H(x)`` for a Hamiltonian spec (or a system, which uses its own)."""
    if isinstance(spec, PHSystem):
        spec = spec.hamiltonian
    val = spec.value(x)
    return float(val) if np.ndim(val) == 0 else val


def discrete_gradient(spec, v, w):
    """Two-point gradient with ``(w-v)^T dg = H(w) - H(v)`` and ``dg(v, v) = grad H(v)``."""
    if isinstance(spec, PHSystem):
        spec = spec.hamiltonian
    return spec.discrete_gradient(v, w)


# System ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PHSystem:
    """Port-Hamiltonian system data.

    ``J`` and ``R`` may be arrays, nested lists containing expression strings,
    callables of the state, or :class:`MatrixField` instances.
    """

    J: MatrixField
    R: MatrixField
    Q: np.ndarray
    B: np.ndarray
    name: str = ""
    energy: object = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        n = Q.shape[0]
        if Q.shape != (n, n):
            raise DimensionMismatch(f"Q must be square, got {Q.shape}")
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(n, -1) if B.size == n else B.reshape(1, -1)
        if B.shape[0] != n:
            raise DimensionMismatch(f"B must have {n} rows, got shape {B.shape}")
        J = _field(self.J, n)
        R = _field(self.R, n)
        if J.n != n or R.n != n:
            raise DimensionMismatch(f"J and R must be {n}x{n}")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "R", R)
        if self.energy is None:
            object.__setattr__(self, "energy", QuadraticHamiltonian(Q))

    @property
    def n(self):
        return self.Q.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def hamiltonian(self):
        return self.energy

    @property
    def is_linear(self):
        return self.J.is_constant and self.R.is_constant

    @property
    def has_quadratic_energy(self):
        return isinstance(self.energy, QuadraticHamiltonian)

    def M(self, x):
        """``J(x) - R(x)``."""
        J, R = self.J, self.R
        x = _as_state(x, self.n)
        if J.is_constant and R.is_constant and x.ndim == 1:
            return J._value - R._value
        return J(x) - R(x)


@dataclass
class StructurePair:
    jminus: np.ndarray
    jplus: np.ndarray
    h: float
    lu: tuple

    def solve(self, b):
        """Solve ``J_- z = b`` with the cached factorization (``b`` may be a matrix)."""
        return _getrs(self.lu[0], self.lu[1], b)[0]

    def solve_transposed(self, b):
        return _getrs(self.lu[0], self.lu[1], b, trans=1)[0]


def _factor(jminus):
    # plain LAPACK getrf: same (lu, piv) layout as lu_factor, but singularity
    # comes back in ``info`` instead of as a warning
    lu, piv, info = _getrf(jminus)
    # a nan/inf anywhere in lu reaches the diagonal test through the sum
    pivots = np.abs(lu.diagonal())
    if info != 0 or not np.isfinite(lu.sum()) or pivots.min() <= PIVOT_TOL:
        raise SingularJminus("J_- is numerically singular; check skew-symmetry of J and PSD of R, Q")
    return lu, piv


@cache
def _eye(n):
    eye = np.eye(n)
    eye.flags.writeable = False
    return eye


def structure_pair(sys, x, h=1.0):
    """Return ``J_-(x) = I - h/2 (J-R) Q`` and ``J_+(x) = I + h/2 (J-R) Q`` with LU of ``J_-``."""
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    x = _as_state(x, sys.n)
    MQ = 0.5 * h * sys.M(x) @ sys.Q
    eye = _eye(sys.n)
    jminus = eye - MQ
    jplus = eye + MQ
    return StructurePair(jminus, jplus, float(h), _factor(jminus))


def psd_sqrt(R):
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues slightly below zero (round-off) are clamped; anything below
    ``-1e-10`` (relative to the matrix scale) is rejected.
    """
    R = np.asarray(R, dtype=float)
    Rs = 0.5 * (R + R.T)
    w, V = np.linalg.eigh(Rs)
    scale = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
    if w.size and w.min() < -PSD_TOL * scale:
        raise NonPSDR(f"R has negative eigenvalue {w.min():.3e}")
    # round-off eigenvalues of a rank-deficient R would otherwise turn into
    # sqrt(eps)-sized entries of the root
    w = np.where(w <= ROOT_FLOOR * scale, 0.0, w)
    return (V * np.sqrt(w)) @ V.T


def dissipation_root(sys, x):
    """``R(x)^{1/2}``, the symmetric PSD square root of the dissipation matrix."""
    return psd_sqrt(sys.R(_as_state(x, sys.n)))


def manifold_residual(sys, x, h=1.0, pair=None):
    """``g(x) = R(x)^{1/2} Q J_-(x)^{-1} x``; zero exactly on the dissipation-free manifold."""
    x = _as_state(x, sys.n)
    if pair is None:
        pair = structure_pair(sys, x, h)
    return dissipation_root(sys, x) @ (sys.Q @ pair.solve(x))


def linear_residual_matrix(sys, h=1.0):
    """Constant matrix ``G = R^{1/2} Q J_-^{-1}`` of a linear system."""
    if not sys.is_linear:
        raise ValueError("linear_residual_matrix requires state-independent J and R")
    x = np.zeros(sys.n)
    pair = structure_pair(sys, x, h)
    return dissipation_root(sys, x) @ sys.Q @ pair.solve(np.eye(sys.n))


# Validation -----------------------------------------------------------------

@dataclass
class SampleDefects:
    index: int
    x: np.ndarray
    skew_defect: float
    r_symmetry_defect: float
    r_min_eigenvalue: float


@dataclass
class ValidationReport:
    samples: list
    q_min_eigenvalue: float
    q_symmetry_defect: float
    errors: list

    @property
    def passed(self):
        return not self.errors


def default_samples(n, count=32, scale=3.0, seed=0):
    """Monte Carlo states in the box ``[-scale, scale]^n`` (plus the origin)."""
    rng = np.random.default_rng(seed)
    return np.vstack([np.zeros(n), rng.uniform(-scale, scale, size=(count - 1, n))])


def validate_system(sys, samples=None, raise_on_error=True):
    """Check skew-symmetry of ``J``, symmetry/PSD of ``R`` on samples and definiteness of ``Q``.

    Returns a :class:`ValidationReport`. With ``raise_on_error`` the first
    violation is raised as ``NonSkewJ``, ``NonPSDR`` or ``NonPDQ``.
    """
    if samples is None:
        samples = default_samples(sys.n)
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] == 0:
        raise ValueError("validation needs at least one sample state")
    errors = []
    recs = []
    for i, x in enumerate(samples):
        J = sys.J(x)
        R = sys.R(x)
        skew = float(np.max(np.abs(J + J.T))) if J.size else 0.0
        sym = float(np.max(np.abs(R - R.T))) if R.size else 0.0
        rmin = float(np.linalg.eigvalsh(0.5 * (R + R.T)).min())
        recs.append(SampleDefects(i, x.copy(), skew, sym, rmin))
        if skew > SKEW_TOL * (1.0 + float(np.max(np.abs(J)))):
            errors.append(NonSkewJ(f"J(x) not skew-symmetric at sample {i} (x={x.tolist()}): defect {skew:.3e}"))
        if sym > SKEW_TOL * (1.0 + float(np.max(np.abs(R)))) or rmin < -PSD_TOL:
            errors.append(NonPSDR(f"R(x) not symmetric PSD at sample {i} (x={x.tolist()}): "
                                  f"asymmetry {sym:.3e}, min eigenvalue {rmin:.3e}"))
    Q = sys.Q
    qsym = float(np.max(np.abs(Q - Q.T)))
    qmin = float(np.linalg.eigvalsh(0.5 * (Q + Q.T)).min())
    if qsym > SKEW_TOL * (1.0 + float(np.max(np.abs(Q)))) or qmin <= 0:
        errors.append(NonPDQ(f"Q must be symmetric positive definite: min eigenvalue {qmin:.3e}"))
    report = ValidationReport(recs, qmin, qsym, errors)
    if raise_on_error and errors:
        raise errors[0]
    return report
