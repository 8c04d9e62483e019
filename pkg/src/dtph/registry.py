"""Built-in systems addressable by name from problem files.

``example1_standin``
    Three-state linear system whose dissipation-free subspace
    ``ker R^{1/2} Q J_-^{-1}`` is ``{x : x1 - x2 + x3 = 0}``. The original
    matrices of this benchmark are not reproduced here; this is a stand-in
    with the same subspace and boundary data. Construction: ``Q = I``, a
    skew ``J``, ``a = [1, -1, 1]``, ``b = (a + h/2 J a) / |a + h/2 J a|`` and
    ``R = rho b b^T``. Then ``J_-^T a`` is parallel to ``b``, so the single
    nonzero row of ``R^{1/2} J_-^{-1}`` is parallel to ``a``.

``example2``
    Two-state nonlinear system with ``Q = diag(2, 1)``, ``J = [[0, 1], [-1, 0]]``,
    ``R(x) = diag((4|x|^2 + 1)^2 / 4, 0)`` and ``B = [1, 0]^T``. Its structure
    matrices are ``J_-(x) = [[1 + (4|x|^2+1)^2/4, -1/2], [1, 1]]`` and
    ``J_+(x) = 2I - J_-(x)``; the residual is
    ``g(x) = (8|x|^2+2)/(16|x|^4+8|x|^2+7) [2 x1 + x2, 0]``.
    ``B`` and ``Q`` are a reconstruction consistent with those formulas.

``scalar_damper``, ``rotation``, ``mass_spring_damper``
    Small linear systems used in tests and demos.
"""
from __future__ import annotations

import numpy as np

from .core import PHSystem, linear_residual_matrix

EXAMPLE1_NORMAL = np.array([1.0, -1.0, 1.0])
EXAMPLE1_J = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 1.0], [0.0, -1.0, 0.0]])
EXAMPLE1_B = np.array([[0.0], [0.0], [1.0]])
EXAMPLE1_RHO = 0.5

EXAMPLE2_R11 = "(4*norm2(x)+1)^2/4"


def example1_standin(h=1.0, rho=EXAMPLE1_RHO):
    a = EXAMPLE1_NORMAL
    v = a + 0.5 * h * EXAMPLE1_J @ a
    b = v / np.linalg.norm(v)
    R = rho * np.outer(b, b)
    sys = PHSystem(EXAMPLE1_J, R, np.eye(3), EXAMPLE1_B, name="example1_standin",
                   meta={"manifold_normal": a.tolist(), "construction_h": h})
    return sys


def example2():
    J = [[0.0, 1.0], [-1.0, 0.0]]
    R = [[EXAMPLE2_R11, 0.0], [0.0, 0.0]]
    return PHSystem(J, R, np.diag([2.0, 1.0]), [[1.0], [0.0]], name="example2",
                    meta={"manifold_normal": [2.0, 1.0]})


def example2_closed_form_residual(x):
    x = np.asarray(x, dtype=float)
    r = np.sum(x * x, axis=-1)
    h1 = 8 * r + 2
    h2 = 16 * r * r + 8 * r + 7
    first = h1 / h2 * (2 * x[..., 0] + x[..., 1])
    return np.stack([first, np.zeros_like(first)], axis=-1)


def scalar_damper():
    return PHSystem([[0.0]], [[1.0]], [[1.0]], [[1.0]], name="scalar_damper")


def rotation():
    return PHSystem([[0.0, 1.0], [-1.0, 0.0]], np.zeros((2, 2)), np.eye(2), [[0.0], [1.0]],
                    name="rotation")


def mass_spring_damper(k=2.0, mass=1.0, c=0.5):
    # state (q, p): H = k q^2 / 2 + p^2 / (2 mass)
    return PHSystem([[0.0, 1.0], [-1.0, 0.0]], np.diag([0.0, c]), np.diag([k, 1.0 / mass]),
                    [[0.0], [1.0]], name="mass_spring_damper")


SYSTEMS = {
    "example1_standin": example1_standin,
    "example2": example2,
    "scalar_damper": scalar_damper,
    "rotation": rotation,
    "mass_spring_damper": mass_spring_damper,
}

# Boundary data attached to the named benchmarks.
DEFAULTS = {
    "example1_standin": {"x0": [1.0, 1.0, 1.0], "xN": [-1.2, -0.7, -1.0], "u_min": -50.0, "u_max": 50.0},
    "example2": {"x0": [2.0, 1.0], "xN": [1.0, 1.0], "u_min": -50.0, "u_max": 50.0},
}


def get_system(name, **kwargs):
    try:
        factory = SYSTEMS[name]
    except KeyError:
        raise KeyError(f"unknown system {name!r}; known: {sorted(SYSTEMS)}") from None
    return factory(**kwargs)


def check_example1_subspace(sys, h=1.0, tol=1e-10):
    """Largest deviation of ``ker R^{1/2} Q J_-^{-1}`` from ``{x1 - x2 + x3 = 0}``.

    Returns the norm of ``G`` applied to an orthonormal basis of the expected
    kernel plus the rank defect, both zero for a correct construction.
    """
    G = linear_residual_matrix(sys, h)
    a = EXAMPLE1_NORMAL / np.linalg.norm(EXAMPLE1_NORMAL)
    basis = np.linalg.svd(a[None, :])[2][1:]
    kernel_err = float(np.max(np.abs(G @ basis.T)))
    rank = int(np.sum(np.linalg.svd(G, compute_uv=False) > tol))
    return kernel_err + abs(rank - 1)
