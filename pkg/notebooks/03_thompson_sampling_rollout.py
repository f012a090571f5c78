"""One Thompson-sampling rollout on the scalar reference system.

Run: python notebooks/03_thompson_sampling_rollout.py
"""

import numpy as np

from tslq import AgentFactory, episode_census, oracle_controller, rollout, tau_cbrt
from tslq.config import load_config

sc = load_config("configs/reference.yaml")
T = 20_000
tau = tau_cbrt(T)

# %% TS against the oracle on a shared noise stream (same seed).
ts = rollout(sc.env, sc.factory(T, tau), T, seed=1)
oracle = rollout(sc.env, oracle_controller(sc.theta_star, sc.cost), T, seed=1)
print(f"J* = {sc.env.J_star:.4f}, tau = {tau}")
for t in (100, 1000, 5000, 20_000):
    print(f"  t={t:6d}  TS regret {ts.cum_regret[t - 1]:9.2f}   oracle regret {oracle.cum_regret[t - 1]:9.2f}")

# %% Episode structure: which trigger ended each episode.
c = episode_census(ts)
print(f"\nresamples: {c.K} ({c.K_det} determinant, {c.K_len} length) plus the initial draw")
last = ts.episode_thetas[-5:, :, 0]
print("last sampled (A, B):", np.round(last, 3).tolist())

# %% Certainty equivalence on the same schedule, for comparison.
ce = rollout(sc.env, AgentFactory("ce", sc.cost, sc.admissible)(T, tau), T, seed=1)
print(f"\nCE regret at T: {ce.regret:.2f}, last estimate (A, B) = {ce.episode_thetas[-1, :, 0]}")
# CE starts from theta_hat = 0, hence gain 0 and u = 0 forever. B is never
# excited, stays estimated at 0, and the loop runs open at cost 1/(1 - A^2).
