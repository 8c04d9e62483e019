import math

import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st

from conftest import random_linear_system
from dtph import (
    ManifoldSpec,
    OCProblem,
    PHSystem,
    dissipation_check,
    estimate_manifold_constant,
    manifold_distance,
    prop2_counterexample,
    registry,
    simulate,
    solve,
    sum_turnpike_metric,
    turnpike_scan,
)
from dtph.dissipativity import distances, middle_third, project
from dtph.errors import DegenerateSampling, NotApplicable, ValidationError

EX1_PLANE = ManifoldSpec.linear_kernel([[1.0, -1.0, 1.0]])
EX2_LINE = ManifoldSpec.linear_kernel([[2.0, 1.0]])


class TestDistance:
    def test_example1_plane(self):
        assert manifold_distance(EX1_PLANE, [1, 1, 1]) == pytest.approx(1 / math.sqrt(3), rel=1e-15)
        assert manifold_distance(EX1_PLANE, [1, 2, 1]) == 0.0

    def test_example2_line(self):
        assert manifold_distance(EX2_LINE, [2, 1]) == pytest.approx(math.sqrt(5), rel=1e-15)

    def test_standin_kernel_is_the_plane(self, ex1, rng):
        spec = ManifoldSpec.for_system(ex1)
        X = rng.uniform(-3, 3, (100, 3))
        np.testing.assert_allclose(distances(spec, X), distances(EX1_PLANE, X), atol=1e-12)

    def test_residual_zero_set_matches_line(self, ex2, rng):
        # the nonlinear projection must rediscover the straight line 2 x1 + x2 = 0
        spec = ManifoldSpec.residual_zero_set(ex2)
        for x in rng.uniform(-3, 3, (40, 2)):
            p = project(spec, x)
            assert not p.surrogate
            assert p.distance == pytest.approx(manifold_distance(EX2_LINE, x), abs=1e-8)

    def test_for_system_uses_registered_normal(self, ex2):
        spec = ManifoldSpec.for_system(ex2)
        assert spec.kind == "linear"
        assert manifold_distance(spec, [2, 1]) == pytest.approx(math.sqrt(5))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            ManifoldSpec("curved")


class TestConstant:
    def test_linear_kernel_matches_singular_value(self, ex1):
        spec = ManifoldSpec.for_system(ex1)
        est = estimate_manifold_constant(spec, (-3, 3), n_samples=2000)
        # every ratio equals the single nonzero singular value for a rank-one G
        assert est.c_hat == pytest.approx(est.singular_value, rel=1e-9)
        assert est.ratio_max == pytest.approx(est.singular_value, rel=1e-9)

    def test_example2_ratio_formula(self, ex2):
        # |g(x)| / dist = sqrt(5) h1/h2 with h1 = 8|x|^2 + 2, h2 = 16|x|^4 + 8|x|^2 + 7
        spec = ManifoldSpec.for_system(ex2)
        x = np.array([1.0, 0.0])
        ratio = np.linalg.norm(spec.residual(x)) / manifold_distance(spec, x)
        assert ratio == pytest.approx(math.sqrt(5) * 10 / 31, rel=1e-13)

    def test_example2_box_estimate(self, ex2):
        est = estimate_manifold_constant(ManifoldSpec.for_system(ex2), (-3, 3), n_samples=5000)
        # the ratio is smallest at the box corners: |x|^2 = 18
        r = 18.0
        corner = math.sqrt(5) * (8 * r + 2) / (16 * r * r + 8 * r + 7)
        assert corner <= est.c_hat <= 1.1 * corner
        r = np.linspace(0, 18, 200001)
        assert est.ratio_max <= math.sqrt(5) * np.max((8 * r + 2) / (16 * r * r + 8 * r + 7)) + 1e-9

    def test_on_manifold_samples_are_excluded(self):
        # a box that is itself part of the manifold
        spec = ManifoldSpec.linear_kernel([[1.0, 0.0]])
        with pytest.raises(DegenerateSampling):
            estimate_manifold_constant(spec, ([0.0, -1.0], [0.0, 1.0]), n_samples=100)

    def test_reproducible(self, ex2):
        spec = ManifoldSpec.for_system(ex2)
        a = estimate_manifold_constant(spec, (-2, 2), n_samples=500, seed=3)
        b = estimate_manifold_constant(spec, (-2, 2), n_samples=500, seed=3)
        assert a == b


class TestDissipationCheck:
    def test_optimal_ddr_trajectory_satisfies(self, ex1):
        d = registry.DEFAULTS["example1_standin"]
        sol = solve(OCProblem(ex1, 30, d["x0"], d["xN"], "ddr", u_min=-50, u_max=50))
        rep = dissipation_check(sol.trajectory, ManifoldSpec.for_system(ex1))
        assert rep.verdict == "satisfied"
        assert min(s.slack for s in rep.steps) >= -1e-9

    def test_on_manifold_autonomous(self, rng):
        # a conservative oscillator next to a damped mode: {x3 = 0} is invariant
        J = [[0, 1, 0], [-1, 0, 0], [0, 0, 0]]
        sys = PHSystem(J, np.diag([0.0, 0.0, 1.0]), np.diag([1.0, 2.0, 1.0]), [[0.0], [1.0], [0.0]])
        spec = ManifoldSpec.for_system(sys)
        traj = simulate(sys, [rng.normal(), rng.normal(), 0.0], np.zeros((5, 1)), "ddr")
        rep = dissipation_check(traj, spec)
        for s in rep.steps:
            assert s.distance == 0.0 and s.alpha == 0.0
            assert s.slack == pytest.approx(-s.storage_delta, abs=1e-15)
            assert s.slack >= -1e-12
        assert rep.verdict == "satisfied"

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    @example(1_326_305_984)  # round-off singular value of 5e-16 must not count as rank
    def test_ddr_linear_inequality_holds_for_any_input(self, seed):
        # with c = smallest singular value of G the DDR inequality holds step by step
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 5))
        sys = random_linear_system(rng, n, 1, r_rank=int(rng.integers(1, n + 1)))
        h = float(rng.uniform(0.2, 2))
        spec = ManifoldSpec.for_system(sys, h)
        sigma = np.linalg.svd(spec.G, compute_uv=False)
        c = float(sigma[sigma > 1e-10 * sigma[0]].min())
        traj = simulate(sys, rng.normal(size=n), rng.normal(size=(6, 1)), "ddr", h)
        rep = dissipation_check(traj, spec, c_hat=c)
        scale = 1 + np.max(np.abs(traj.energies))
        assert min(s.slack for s in rep.steps) >= -1e-9 * scale

    def test_summed_slack_is_cumulative(self, ex2, rng):
        traj = simulate(ex2, [2.0, 1.0], rng.uniform(-1, 1, (8, 1)), "ddr")
        rep = dissipation_check(traj, ManifoldSpec.for_system(ex2), c_hat=0.05)
        assert rep.summed_slack == pytest.approx(sum(s.slack for s in rep.steps), abs=1e-12)
        assert rep.steps[-1].cumulative_slack == pytest.approx(rep.summed_slack, abs=1e-15)
        assert rep.c_hat == 0.05


class TestCounterexample:
    def test_default_scalar(self):
        ce = prop2_counterexample()
        assert ce.x0.tolist() == [1.0]
        assert ce.u.tolist() == [-2.0]
        assert ce.cost == 0.0
        assert ce.energy_change == 0.0
        assert ce.distance == 1.0
        assert ce.trajectory.outputs[0, 0] == 0.0
        assert ce.report.verdict == "violated"
        assert ce.report.first_violation == 0
        assert ce.report.steps[0].slack == pytest.approx(-1.0, abs=1e-15)
        assert ce.solver_inputs[0, 0] == pytest.approx(-2.0, abs=1e-9)

    def test_alpha_follows_c_hat(self):
        ce = prop2_counterexample(c_hat=0.5, cross_check=False)
        assert ce.report.steps[0].slack == pytest.approx(-0.25, abs=1e-15)

    def test_zero_state_rejected(self, damper):
        with pytest.raises(ValidationError):
            prop2_counterexample(damper, x0=[0.0])

    def test_conservative_system(self, rotation):
        with pytest.raises(NotApplicable):
            prop2_counterexample(rotation)

    def test_state_outside_range_of_B(self, ex1):
        with pytest.raises(ValidationError):
            prop2_counterexample(ex1, x0=[1.0, 0.0, 0.0])

    def test_standin_system(self, ex1):
        ce = prop2_counterexample(ex1, cross_check=False)
        assert ce.report.verdict == "violated"
        assert ce.cost == pytest.approx(0.0, abs=1e-14)


class TestTurnpike:
    def test_metric_examples(self):
        assert sum_turnpike_metric(np.array([[1.0, 1.0, 1.0]]), EX1_PLANE) == pytest.approx(1 / 3)
        assert sum_turnpike_metric(np.array([[1.0, 2.0, 1.0], [0.0, 0.0, 0.0]]), EX1_PLANE) == 0.0

    def test_metric_excludes_final_state(self, damper):
        traj = simulate(damper, [1.0], [[0.0]], "ddr")
        spec = ManifoldSpec.for_system(damper)
        assert sum_turnpike_metric(traj, spec) == pytest.approx(1.0)

    def test_metric_is_additive(self, rng):
        X = rng.normal(size=(10, 3))
        total = sum_turnpike_metric(X, EX1_PLANE)
        assert total == pytest.approx(sum_turnpike_metric(X[:4], EX1_PLANE) + sum_turnpike_metric(X[4:], EX1_PLANE))

    @pytest.mark.parametrize("N, expected", [(3, [1, 2]), (20, list(range(7, 14))), (80, list(range(27, 54)))])
    def test_middle_third(self, N, expected):
        assert middle_third(N).tolist() == expected

    def test_scan_records_each_horizon(self, ex1):
        d = registry.DEFAULTS["example1_standin"]
        p = OCProblem(ex1, 20, d["x0"], d["xN"], "ddr", u_min=-50, u_max=50)
        scan = turnpike_scan(p, [10, 20], warm_start=True)
        assert [r.N for r in scan.horizons] == [10, 20]
        assert all(r.status == "Converged" for r in scan.horizons)
        assert scan.distance_x0 == pytest.approx(1 / math.sqrt(3))
        for r in scan.horizons:
            assert r.warm_start_cost is None or r.cost <= r.warm_start_cost + 1e-8

    def test_scan_keeps_going_after_a_failure(self, damper):
        p = OCProblem(damper, 3, [1.0], [0.0])
        scan = turnpike_scan(p, [0, 3])
        assert scan.horizons[0].status == "Error" or scan.horizons[0].error
        assert scan.horizons[1].status == "Converged"

    def test_empty_scan(self, damper):
        scan = turnpike_scan(OCProblem(damper, 3, [1.0], [0.0]), [])
        assert scan.as_dict()["horizons"] == []


def test_custom_nonlinear_residual_manifold():
    # R depends on x, no registered normal: distances come from projection
    sys = PHSystem([[0.0, 1.0], [-1.0, 0.0]], [["1 + x2^2", 0], [0, 0]], np.eye(2), [[1.0], [0.0]])
    spec = ManifoldSpec.for_system(sys)
    assert spec.kind == "residual"
    p = project(spec, np.array([0.5, 0.3]))
    assert np.linalg.norm(spec.residual(p.point)) <= 1e-8
    assert p.distance > 0
