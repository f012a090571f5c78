"""Riccati solutions, average cost and its gradient on scalar systems.

Run: python notebooks/01_riccati_and_gradients.py
"""

import numpy as np

from tslq import CostMatrices, LqParams, average_cost_1d, grad_J, solve_riccati

cost = CostMatrices.scalar(1.0, 1.0)

# %% The scalar Riccati fixed point against the closed-form stationary cost.
print("   A     B       Tr P     closed form     K        A+BK")
for a, b in [(0.0, 1.0), (0.5, 1.0), (0.9, 0.5), (1.1, 0.8)]:
    th = LqParams.scalar(a, b)
    sol = solve_riccati(th, cost)
    print(f"{a:5.2f} {b:5.2f} {sol.J:10.6f} {average_cost_1d(th, cost):12.6f} "
          f"{sol.K[0, 0]:8.4f} {sol.A_c[0, 0]:8.4f}")

# %% J grows without bound as B shrinks toward an unstabilizable pair.
print("\nJ(0.9, b) as b -> 0")
for b in [1.0, 0.5, 0.2, 0.1, 0.05]:
    print(f"  b={b:5.2f}  J={solve_riccati(LqParams.scalar(0.9, b), cost).J:10.4f}")

# %% The gradient from the Lyapunov solve, compared with finite differences.
th = LqParams.scalar(0.9, 0.5)
g = grad_J(th, cost)
h = 1e-6
fd = np.array([
    (solve_riccati(LqParams.scalar(0.9 + h, 0.5), cost).J - solve_riccati(LqParams.scalar(0.9 - h, 0.5), cost).J),
    (solve_riccati(LqParams.scalar(0.9, 0.5 + h), cost).J - solve_riccati(LqParams.scalar(0.9, 0.5 - h), cost).J),
]) / (2 * h)
print(f"\ngrad J at (0.9, 0.5): analytic {g.ravel()}, finite difference {fd}")
