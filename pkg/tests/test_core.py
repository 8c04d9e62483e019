import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dtph import (
    ExpressionHamiltonian,
    MatrixField,
    PHSystem,
    QuadraticHamiltonian,
    discrete_gradient,
    hamiltonian,
    linear_residual_matrix,
    manifold_residual,
    registry,
    structure_pair,
    validate_system,
)
from dtph.core import dissipation_root, psd_sqrt
from dtph.errors import DimensionMismatch, NonPDQ, NonPSDR, NonSkewJ, QuadratureFailure

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


class TestValidation:
    def test_canonical_system_passes(self):
        sys = PHSystem([[0, 1], [-1, 0]], np.diag([1.0, 0.0]), np.eye(2), [[1], [0]])
        assert validate_system(sys).passed

    def test_indefinite_R(self):
        sys = PHSystem(np.zeros((2, 2)), [[0, 1], [1, 0]], np.eye(2), [[1], [0]])
        with pytest.raises(NonPSDR):
            validate_system(sys)

    def test_singular_Q(self):
        sys = PHSystem(np.zeros((2, 2)), np.zeros((2, 2)), np.diag([1.0, 0.0]), [[1], [0]])
        with pytest.raises(NonPDQ):
            validate_system(sys)

    def test_non_skew_J_reports_sample(self):
        sys = PHSystem([["x1", 1], [-1, 0]], np.zeros((2, 2)), np.eye(2), [[1], [0]])
        report = validate_system(sys, samples=[[0, 0], [2, 0]], raise_on_error=False)
        assert not report.passed
        assert isinstance(report.errors[0], NonSkewJ)
        assert "sample 1" in str(report.errors[0])

    def test_state_dependent_R_is_checked_on_samples(self):
        sys = PHSystem(np.zeros((1, 1)), [["x1"]], [[1.0]], [[1.0]])
        validate_system(sys, samples=[[0.5], [2.0]])
        with pytest.raises(NonPSDR):
            validate_system(sys, samples=[[0.5], [-2.0]])

    @pytest.mark.parametrize("name", sorted(registry.SYSTEMS))
    def test_registry_systems_validate(self, name):
        assert validate_system(registry.get_system(name)).passed

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            PHSystem(np.zeros((2, 2)), np.zeros((2, 2)), np.eye(2), [[1], [0], [0]])
        with pytest.raises(DimensionMismatch):
            PHSystem(np.zeros((3, 3)), np.zeros((2, 2)), np.eye(2), [[1], [0]])


class TestHamiltonian:
    @pytest.mark.parametrize(
        "Q, x, expected",
        [(np.eye(3), [1, 1, 1], 1.5), (np.diag([1.0, 2.0]), [2, 3], 11.0), (np.diag([3.0, 1.0]), [0, 0], 0.0)],
    )
    def test_values(self, Q, x, expected):
        assert hamiltonian(QuadraticHamiltonian(Q), x) == pytest.approx(expected, abs=1e-15)

    def test_batch_evaluation(self):
        H = QuadraticHamiltonian(np.diag([1.0, 2.0]))
        np.testing.assert_allclose(H.value(np.array([[2, 3], [0, 0], [1, 0]])), [11, 0, 0.5])

    def test_expression_gradient_matches_differences(self):
        H = ExpressionHamiltonian.parse("x1^4/4 + x1*x2 + exp(x2)/2", 2)
        assert H.check_gradient(np.array([0.7, -0.3])) < 1e-8


class TestDiscreteGradient:
    def test_quadratic_examples(self):
        np.testing.assert_allclose(discrete_gradient(QuadraticHamiltonian(np.eye(2)), [1, 0], [0, 1]), [0.5, 0.5])
        np.testing.assert_allclose(
            discrete_gradient(QuadraticHamiltonian(np.diag([1.0, 2.0])), [2, 3], [2, 3]), [2, 6])

    def test_quartic(self):
        H = ExpressionHamiltonian.parse("x1^4/4", 1)
        assert discrete_gradient(H, [0.0], [2.0])[0] == pytest.approx(2.0, rel=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(arrays(float, 3, elements=finite), arrays(float, 3, elements=finite))
    def test_secant_identity_expression(self, v, w):
        H = ExpressionHamiltonian.parse("x1^4/4 + x2^2*(1 + x3^2)/2 + x3^2", 3)
        dg = discrete_gradient(H, v, w)
        lhs = (w - v) @ dg
        rhs = H.value(w) - H.value(v)
        assert abs(lhs - rhs) <= 1e-8 * (1 + abs(H.value(v)) + abs(H.value(w)))

    @settings(max_examples=100, deadline=None)
    @given(arrays(float, 2, elements=finite))
    def test_diagonal_is_gradient(self, v):
        H = ExpressionHamiltonian.parse("x1^4/4 + cos(x2) + x1*x2", 2)
        np.testing.assert_allclose(discrete_gradient(H, v, v), H.gradient(v), atol=1e-12, rtol=1e-12)

    def test_quadrature_failure_is_reported(self):
        # exp(30 x) over [0, 1] is far too steep for ten Gauss points
        H = ExpressionHamiltonian.parse("exp(30*x1)", 1)
        with pytest.raises(QuadratureFailure):
            discrete_gradient(H, [0.0], [1.0])


class TestStructurePair:
    def test_scalar(self, damper):
        pair = structure_pair(damper, [0.0], 1.0)
        assert pair.jminus[0, 0] == 1.5 and pair.jplus[0, 0] == 0.5

    def test_rotation(self, rotation):
        pair = structure_pair(rotation, [0.3, 0.1], 1.0)
        np.testing.assert_allclose(pair.jminus, [[1, -0.5], [0.5, 1]])
        np.testing.assert_allclose(pair.jminus + pair.jplus, 2 * np.eye(2))

    def test_zero_Q(self):
        sys = PHSystem([[0, 1], [-1, 0]], np.eye(2), np.zeros((2, 2)), [[1], [0]])
        np.testing.assert_array_equal(structure_pair(sys, [1.0, 2.0]).jminus, np.eye(2))

    def test_example2_entries(self, ex2):
        x = np.array([1.0, 1.0])
        pair = structure_pair(ex2, x)
        r = x @ x
        np.testing.assert_allclose(pair.jminus, [[1 + (4 * r + 1) ** 2 / 4, -0.5], [1.0, 1.0]], rtol=1e-14)

    def test_nonpositive_step(self, damper):
        with pytest.raises(ValueError):
            structure_pair(damper, [0.0], 0.0)

    def test_invertible_on_random_systems(self, rng):
        from conftest import random_linear_system
        for n in (1, 2, 4, 6):
            sys = random_linear_system(rng, n, 1, scale=5.0)
            pair = structure_pair(sys, np.zeros(n), 2.0)
            assert np.all(np.abs(np.linalg.eigvals(pair.jminus)) > 0.99)


class TestSquareRoot:
    def test_diagonal(self):
        np.testing.assert_allclose(psd_sqrt(np.diag([4.0, 0.0])), np.diag([2.0, 0.0]))
        np.testing.assert_allclose(psd_sqrt(np.eye(3)), np.eye(3))

    def test_residual(self):
        R = np.array([[2.0, 1.0], [1.0, 1.0]])
        M = psd_sqrt(R)
        assert np.max(np.abs(M @ M - R)) <= 1e-12
        np.testing.assert_allclose(M, M.T)

    def test_rank_one_has_no_roundoff_noise(self):
        b = np.array([1.0, 2.0, -1.0]) / np.sqrt(6)
        M = psd_sqrt(0.5 * np.outer(b, b))
        assert np.linalg.matrix_rank(M, tol=1e-12) == 1

    def test_rejects_indefinite(self):
        with pytest.raises(NonPSDR):
            psd_sqrt(np.array([[0.0, 1.0], [1.0, 0.0]]))

    def test_state_dependent(self, ex2):
        x = np.array([0.5, 1.0])
        root = dissipation_root(ex2, x)
        assert root[0, 0] == pytest.approx((4 * (x @ x) + 1) / 2)


class TestManifoldResidual:
    def test_example2_point(self, ex2):
        np.testing.assert_allclose(manifold_residual(ex2, [1.0, 0.0]), [20 / 31, 0.0], rtol=1e-14)

    def test_example2_on_manifold(self, ex2):
        np.testing.assert_allclose(manifold_residual(ex2, [1.0, -2.0]), [0.0, 0.0], atol=1e-15)

    def test_scalar(self, damper):
        assert manifold_residual(damper, [3.0])[0] == pytest.approx(2.0, rel=1e-15)

    def test_example2_closed_form_on_grid(self, ex2):
        xs = np.stack(np.meshgrid(np.linspace(-3, 3, 25), np.linspace(-3, 3, 25)), -1).reshape(-1, 2)
        ours = np.array([manifold_residual(ex2, x) for x in xs])
        closed = registry.example2_closed_form_residual(xs)
        assert np.max(np.abs(ours - closed)) <= 1e-12 * max(1.0, np.max(np.abs(closed)))

    def test_example1_subspace(self, ex1):
        assert registry.check_example1_subspace(ex1) <= 1e-10
        G = linear_residual_matrix(ex1)
        assert np.max(np.abs(G @ np.array([1.0, 1.0, 0.0]))) <= 1e-12
        assert np.linalg.norm(G @ np.array([1.0, -1.0, 1.0])) > 0.1


class TestMatrixField:
    def test_expression_jacobian(self):
        F = MatrixField.from_entries([["x1*x2", "norm2(x)"], [0, "sin(x1)"]])
        x = np.array([0.4, -1.3])
        D = F.jacobian(x)
        eps = 1e-6
        for l in range(2):
            e = np.zeros(2)
            e[l] = eps
            np.testing.assert_allclose(D[:, :, l], (F(x + e) - F(x - e)) / (2 * eps), atol=1e-8)

    def test_batch_matches_pointwise(self):
        F = MatrixField.from_entries([["x1^2", 1], ["-x2", "exp(x1)"]])
        X = np.array([[0.1, 0.2], [1.0, -2.0], [3.0, 0.5]])
        np.testing.assert_allclose(F(X), np.stack([F(x) for x in X]), rtol=0, atol=0)

    def test_constant_entries_collapse(self):
        F = MatrixField.from_entries([["1+1", 0], [0, "2^3"]])
        assert F.is_constant
        np.testing.assert_array_equal(F(np.zeros(2)), np.diag([2.0, 8.0]))

    def test_callable_field(self):
        F = MatrixField.from_callable(1, lambda x: np.array([[x[0] ** 3]]))
        assert F.jacobian(np.array([2.0]))[0, 0, 0] == pytest.approx(12.0, rel=1e-8)
