"""Nonlinear dissipation: Example 2 with state-dependent R(x).

The dissipation-free manifold is the line 2 x1 + x2 = 0. The optimal DDR
trajectory from [2, 1] to [1, 1] moves onto the line, stays there, and
leaves it at the end. The solve uses eight starts and takes under a
minute on an idle machine.

The steady-state problem is solved too: every zero-cost steady state lies
on the line, and its cost equals the dissipation term |g(x)|^2.
"""
import time

import numpy as np

from dtph import OCProblem, registry, solve, steady_state_solve
from dtph.dissipativity import middle_third

sys = registry.example2()
t = time.perf_counter()
sol = solve(OCProblem(sys, 40, [2.0, 1.0], [1.0, 1.0], "ddr", u_min=-50, u_max=50))
X = sol.trajectory.states
line = np.abs(2 * X[:, 0] + X[:, 1])
print(f"status {sol.status}, cost {sol.cost:.6f}, start '{sol.start}', {time.perf_counter() - t:.0f} s")
print("|2 x1 + x2| along the horizon:")
for k in range(0, 41, 4):
    print(f"  k={k:2d}  {line[k]:.3e}")
print(f"middle third max: {line[middle_third(40)].max():.3e}")

print("\nsteady states (converged starts):")
for s in steady_state_solve(sys, n_starts=6):
    if s.converged:
        print(f"  x = [{s.x_bar[0]: .4f}, {s.x_bar[1]: .4f}]  cost {s.cost:.1e}  "
              f"|cost - |g|^2| {s.prop4_gap:.1e}  2x1+x2 {2 * s.x_bar[0] + s.x_bar[1]: .1e}")
