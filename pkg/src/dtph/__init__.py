"""Discrete-time port-Hamiltonian systems: structure-preserving steps,
energy-optimal control and turnpike/dissipativity diagnostics."""
from .core import (
    ExpressionHamiltonian,
    MatrixField,
    PHSystem,
    QuadraticHamiltonian,
    discrete_gradient,
    dissipation_root,
    hamiltonian,
    linear_residual_matrix,
    manifold_residual,
    structure_pair,
    validate_system,
)
from .dissipativity import (
    ManifoldSpec,
    dissipation_check,
    estimate_manifold_constant,
    manifold_distance,
    prop2_counterexample,
    sum_turnpike_metric,
    turnpike_scan,
)
from .expr import parse_expression
from .ocp import (
    OCProblem,
    SolverOptions,
    brute_force_oracle,
    build_turnpike_control,
    solve,
    stage_cost,
    steady_state_solve,
)
from .registry import get_system
from .stepper import Scheme, Trajectory, ddr_step, midpoint_step, simulate, step, step_batch

__version__ = "0.1.0"

__all__ = [
    "ExpressionHamiltonian", "MatrixField", "PHSystem", "QuadraticHamiltonian", "discrete_gradient",
    "dissipation_root", "hamiltonian", "linear_residual_matrix", "manifold_residual", "structure_pair",
    "validate_system", "ManifoldSpec", "dissipation_check", "estimate_manifold_constant",
    "manifold_distance", "prop2_counterexample", "sum_turnpike_metric", "turnpike_scan",
    "parse_expression", "OCProblem", "SolverOptions", "brute_force_oracle", "build_turnpike_control",
    "solve", "stage_cost", "steady_state_solve", "get_system", "Scheme", "Trajectory", "ddr_step",
    "midpoint_step", "simulate", "step", "step_batch",
]
