"""Why the midpoint rule does not inherit strict dissipativity.

For the scalar damper (J = 0, R = Q = B = 1, h = 1) the transfer x0 = 1 to
xN = -1 in one midpoint step has a unique input, u = -2. It makes the
output, the stage cost and the dissipated energy all vanish, although x0
is at distance 1 from the manifold {0}. The dissipation inequality with
storage H therefore fails by alpha(1).
"""
from dtph import prop2_counterexample

ce = prop2_counterexample()
step = ce.report.steps[0]
print(f"input u = {ce.u[0]}, output y = {ce.trajectory.outputs[0, 0]}")
print(f"stage cost {ce.cost}, energy change {ce.energy_change}, distance {ce.distance}")
print(f"slack = cost - dH - alpha(dist) = {step.slack}  ->  verdict: {ce.report.verdict}")
print(f"solver confirms the input: {ce.solver_inputs[0, 0]:.9f}")
