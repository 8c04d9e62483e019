"""Turnpike behaviour of energy-optimal control on the Example-1 stand-in.

The DDR optimal trajectories approach the dissipation-free plane
x1 - x2 + x3 = 0 and stay near it for most of the horizon. Their summed
squared distance to the plane is practically the same for N = 20, 40, 80.
The midpoint optimal trajectories do not show this: their summed distance
keeps growing with N.

Writes plot-ready CSV files to demos/out/example1/.
"""
from pathlib import Path

from dtph import ManifoldSpec, OCProblem, registry, solve, sum_turnpike_metric
from dtph.configio import write_trajectory_csv
from dtph.dissipativity import distances, middle_third

out = Path(__file__).parent / "out" / "example1"
out.mkdir(parents=True, exist_ok=True)

sys = registry.example1_standin()
d = registry.DEFAULTS["example1_standin"]
spec = ManifoldSpec.for_system(sys)

print(f"{'scheme':>9} {'N':>4} {'cost':>10} {'sum dist^2':>11} {'mid-third max dist':>19}")
for scheme in ("ddr", "midpoint"):
    for N in (20, 40, 80):
        sol = solve(OCProblem(sys, N, d["x0"], d["xN"], scheme, u_min=-50, u_max=50))
        D = distances(spec, sol.trajectory.states)
        print(f"{scheme:>9} {N:4d} {sol.cost:10.4f} {sum_turnpike_metric(sol.trajectory, spec):11.4f} "
              f"{D[middle_third(N)].max():19.2e}")
        write_trajectory_csv(sol.trajectory, out / f"{scheme}_N{N}.csv", spec)
print(f"\nCSV files in {out}")
