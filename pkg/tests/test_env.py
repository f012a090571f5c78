import csv
import functools
import io
import math

import numpy as np
import pytest

from tslq import (
    AgentFactory,
    ConfidenceParams,
    CostMatrices,
    Environment,
    LqParams,
    NumericalBlowup,
    TsAgent,
    TsConfig,
    bounded_state_event,
    episode_census,
    oracle_controller,
    replicate,
    rollout,
    solve_riccati,
    tau_cbrt,
)
from tslq.agents import Trigger
from tslq.env import write_summary_csv


def test_environment_rejects_bad_noise(ref):
    theta, cost, S, env = ref
    with pytest.raises(ValueError):
        Environment(theta, cost, noise_std=np.eye(2))
    env.check_admissible(S)


def test_zero_noise_oracle_stays_at_origin(ref):
    theta, cost, S, env = ref
    tr = rollout(env, oracle_controller(theta, cost), 200, noise_scale=0.0)
    assert np.all(tr.x == 0) and np.all(tr.cost == 0)
    assert tr.regret == pytest.approx(-200 * env.J_star, rel=1e-12)


def test_geometric_series_from_unit_state(ref):
    theta, cost, S, env = ref
    sol = solve_riccati(theta, cost)
    a_c, k = float(sol.A_c[0, 0]), float(sol.K[0, 0])
    T = 60
    tr = rollout(env, oracle_controller(theta, cost), T, x0=[1.0], noise_scale=0.0)
    powers = a_c ** np.arange(T)
    np.testing.assert_allclose(tr.x[:, 0], powers, rtol=1e-12, atol=1e-300)
    expected = (1 + k * k) * (1 - a_c ** (2 * T)) / (1 - a_c**2)
    assert tr.cost.sum() == pytest.approx(expected, rel=1e-12)


def test_cost_recomputation_and_telescoping(ref):
    theta, cost, S, env = ref
    tr = rollout(env, AgentFactory("ts", cost, S)(500, 8), 500, seed=3)
    recomputed = tr.x[:, 0] ** 2 * cost.Q[0, 0] + tr.u[:, 0] ** 2 * cost.R[0, 0]
    np.testing.assert_allclose(tr.cost, recomputed, rtol=0, atol=1e-12)
    steps = np.diff(np.concatenate([[0.0], tr.cum_regret]))
    np.testing.assert_allclose(steps, tr.cost - env.J_star, atol=1e-9)


def test_trace_csv_layout(ref):
    theta, cost, S, env = ref
    tr = rollout(env, oracle_controller(theta, cost), 20, seed=1)
    rows = list(csv.reader(io.StringIO(tr.to_csv())))
    assert rows[0] == ["t", "x0", "u0", "cost", "cum_regret", "episode", "resample", "trigger", "norm_z_Vinv"]
    assert len(rows) == 21
    assert rows[1][7] == "initial" and rows[2][7] == "none"
    assert float(rows[5][3]) == tr.cost[4]  # repr round-trips exactly


def test_bounded_state_event(ref):
    theta, cost, S, env = ref
    tr = rollout(env, oracle_controller(theta, cost), 100, seed=2)
    X = tr.max_state_norm
    assert bounded_state_event(tr, X).holds
    assert not bounded_state_event(tr, 0.99 * X).holds


def test_blowup_guard():
    theta = LqParams.scalar(1.5, 0.0)
    cost = CostMatrices.scalar()
    env = Environment(LqParams.scalar(1.5, 1.0), cost)

    class Idle:
        lam = 1.0
        trigger = Trigger.NONE
        episode_index = 0
        theta_tilde = theta

        def reset(self, rng):
            pass

        def step(self, x, t, rls):
            return np.zeros(1), False

    with pytest.raises(NumericalBlowup):
        rollout(env, Idle(), 500, x0=[1.0], noise_scale=0.0, blowup=1e6)


@pytest.mark.slow
def test_oracle_ergodic_average():
    theta = LqParams.scalar(0.5, 1.0)
    cost = CostMatrices.scalar()
    env = Environment(theta, cost)
    T = 100_000
    sums = replicate(env, lambda: oracle_controller(theta, cost), T, 20, base_seed=100)
    mean = np.mean([s.regret for s in sums])
    assert abs(mean) / T <= 0.02 * env.J_star


# replicate -------------------------------------------------------------------

def test_single_replication_matches_rollout(ref):
    theta, cost, S, env = ref
    f = AgentFactory("ts", cost, S)
    summaries, traces = replicate(env, lambda: f(300, 7), 300, 1, base_seed=9, keep_traces=True)
    direct = rollout(env, f(300, 7), 300, seed=9)
    np.testing.assert_array_equal(traces[0].x, direct.x)
    assert summaries[0].regret == direct.regret


def test_replicate_is_deterministic_and_job_count_invariant(ref):
    theta, cost, S, env = ref
    f = functools.partial(AgentFactory("ts", cost, S), 400, 8)
    a = replicate(env, f, 400, 4, base_seed=20)
    b = replicate(env, f, 400, 4, base_seed=20)
    c = replicate(env, f, 400, 4, base_seed=20, jobs=4)
    assert a == b == c
    assert [s.seed for s in a] == [20, 21, 22, 23]


def test_replicate_records_failures(ref):
    theta, cost, S, env = ref
    summaries = replicate(env, lambda: AgentFactory("ts", cost, S)(200, 5),
                          200, 2, blowup=1e-9)
    assert all(not s.ok for s in summaries)
    buf = io.StringIO()
    write_summary_csv(summaries, buf)
    assert buf.getvalue().splitlines()[1].endswith("NumericalBlowup: |x| exceeded 1e-09 at step 1")


def test_batch_means_variance_scales(ref):
    theta, cost, S, env = ref
    T, m = 200, 8
    R = np.array([s.regret for s in replicate(env, lambda: oracle_controller(theta, cost), T, 4 * m,
                                              base_seed=1000)])
    single = R.var(ddof=1)
    means = R.reshape(4, m).mean(axis=1)
    # loose: four batch means against var/m, chi-square with 3 dof
    assert means.var(ddof=1) < 5 * single / m


# episode census --------------------------------------------------------------

def _ts(cost, S, T, tau):
    return TsAgent(cost, TsConfig(tau, ConfidenceParams(0.05, S.S, T=T), S))


def test_census_without_length_trigger(ref):
    theta, cost, S, env = ref
    T = 300
    tr = rollout(env, _ts(cost, S, T, T), T, noise_scale=0.0)
    c = episode_census(tr)
    assert c.K_len == 0 and c.K_det == 0 and c.initial == 1


def test_census_unit_tau(ref):
    theta, cost, S, env = ref
    T = 200
    tr = rollout(env, _ts(cost, S, T, 1), T, seed=4)
    c = episode_census(tr)
    # every step after the initial draw resamples for one reason or the other
    assert c.K_len == T - 1 - c.K_det
    assert c.K == T - 1


def test_census_determinant_bound(ref):
    theta, cost, S, env = ref
    T = 10_000
    tau = tau_cbrt(T)
    tr = rollout(env, _ts(cost, S, T, tau), T, seed=8)
    c = episode_census(tr)
    X = tr.max_state_norm
    Ceff = max(S.C, max(abs(solve_riccati(LqParams.from_theta(t, 1), cost).K[0, 0])
                        for t in tr.episode_thetas))
    bound = 2 * math.log2(1 + T * X * X * (1 + Ceff**2))
    assert c.K_det <= bound
    assert c.K_len <= math.ceil(T / tau)
    assert c.K <= bound + math.ceil(T / tau) + 1
