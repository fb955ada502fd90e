"""
A continuum of modes and its finite projections
================================================

In the continuum problem the mode is a drift level in [-1, 1]. The
regression solver handles it directly with a Chebyshev basis in the
mode. Restricting the modes to k well-spread points gives finite
problems that the lattice DP can solve; their values increase with k
and stay below the continuum value.
"""
from switchbsde import TimeGrid, catalog, dp_solve, solve_reflected
from switchbsde.problem import project_problem

problem = catalog("p3-continuum")
cont = solve_reflected(problem, TimeGrid(problem.T, 50), M=10_000, seed=42)
print(f"continuum reflected y0 = {cont.y0:.4f} +- {cont.y0_stderr:.4f}")

for k in (2, 4, 8, 16):
    finite = project_problem(problem, k)
    print(f"k = {k:2d} ({finite.modespace.n_modes} modes with xi0): DP value {dp_solve(finite, N=50).value:.4f}")
