"""Regularized least squares and the confidence radius along one trajectory.

Run: python notebooks/02_rls_confidence.py
"""

import numpy as np

from tslq import ConfidenceParams, LqParams, RlsState, beta, solve_riccati, CostMatrices

theta = LqParams.scalar(0.9, 0.5)
K = solve_riccati(theta, CostMatrices.scalar()).K[0, 0]
conf = ConfidenceParams(delta=0.05, S=2.0, T=10_000)
rng = np.random.default_rng(0)

# %% Excite the system with the optimal gain plus a little input noise so
# both coordinates of theta are identifiable.
rls = RlsState(1, 1, lam=1.0)
x = 0.0
print("     t    theta_hat (A, B)      |err|_V     beta")
for t in range(1, 10_001):
    u = K * x + 0.3 * rng.standard_normal()
    x_next = 0.9 * x + 0.5 * u + rng.standard_normal()
    rls.update([x, u], [x_next])
    x = x_next
    if t in (10, 100, 1000, 10_000):
        err = rls.weighted_error(theta.theta)
        print(f"{t:6d}   ({rls.theta_hat[0, 0]:.4f}, {rls.theta_hat[1, 0]:.4f})   {err:9.4f}  {beta(rls, conf):7.3f}")

# The weighted error stays inside the radius while the radius itself grows
# only like the square root of log det V.
