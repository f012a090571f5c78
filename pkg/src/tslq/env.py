"""Ground-truth LQ simulation, regret traces and replication batches."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .agents import Trigger
from .errors import NumericalBlowup
from .lq import AdmissibleSet, CostMatrices, LqParams, is_admissible, solve_riccati
from .rls import RlsState

BLOWUP_THRESHOLD = 1e8


@dataclass(frozen=True)
class Environment:
    """True system ``x_{t+1} = A x_t + B u_t + eps_{t+1}``, ``eps ~ N(0, noise_std noise_std')``."""

    theta_star: LqParams
    cost: CostMatrices
    noise_std: np.ndarray | None = None
    J_star: float = field(init=False)

    def __post_init__(self):
        n = self.theta_star.n
        std = np.eye(n) if self.noise_std is None else np.atleast_2d(np.asarray(self.noise_std, float))
        if std.shape != (n, n):
            raise ValueError(f"noise_std must be {n}x{n}")
        object.__setattr__(self, "noise_std", std)
        object.__setattr__(self, "J_star", solve_riccati(self.theta_star, self.cost).J)

    @property
    def noise_cov(self) -> np.ndarray:
        return self.noise_std @ self.noise_std.T

    def check_admissible(self, S: AdmissibleSet) -> None:
        if not is_admissible(self.theta_star, self.cost, S):
            raise ValueError("theta_star is not in the admissible set")


@dataclass
class RegretTrace:
    """Per-step record of a rollout.

    ``x[t], u[t], cost[t]`` are the state, control and cost at step ``t``;
    ``x_final`` is the state after the last step. ``episode_thetas[k]`` is
    the parameter used during episode ``k`` and ``episode[t]`` the episode
    active at step ``t``. ``episode_ts_error[k]`` is ``|theta_tilde -
    theta_hat|_V`` at the moment episode ``k`` was drawn. ``logdet_V`` and
    ``rls_error`` are evaluated at ``V_t`` / ``theta_hat_t`` before the
    step-``t`` update.
    """

    x: np.ndarray
    u: np.ndarray
    cost: np.ndarray
    cum_regret: np.ndarray
    episode: np.ndarray
    resample: np.ndarray
    trigger: np.ndarray
    norm_z_Vinv: np.ndarray
    logdet_V: np.ndarray
    rls_error: np.ndarray
    x_final: np.ndarray
    episode_thetas: np.ndarray
    J_star: float
    noise_cov: np.ndarray
    lam: float
    logdet_final: float
    episode_ts_error: np.ndarray | None = None
    rejection_attempts: int = 0

    @property
    def T(self) -> int:
        return self.cost.size

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def d(self) -> int:
        return self.u.shape[1]

    @property
    def regret(self) -> float:
        return float(self.cum_regret[-1]) if self.T else 0.0

    @property
    def max_state_norm(self) -> float:
        norms = np.linalg.norm(np.vstack([self.x, self.x_final[None, :]]), axis=1)
        return float(np.max(norms))

    @property
    def z(self) -> np.ndarray:
        return np.hstack([self.x, self.u])

    @property
    def theta_tilde(self) -> np.ndarray:
        """Parameter in use at every step, shape ``(T, n + d, n)``."""
        return self.episode_thetas[self.episode]

    def to_csv(self, fp=None) -> str | None:
        """Write one row per step; returns the text when ``fp`` is None."""
        own = fp is None
        if own:
            fp = io.StringIO()
        w = csv.writer(fp, lineterminator="\n")
        n, d = self.n, self.d
        w.writerow(
            ["t"] + [f"x{i}" for i in range(n)] + [f"u{i}" for i in range(d)]
            + ["cost", "cum_regret", "episode", "resample", "trigger", "norm_z_Vinv"]
        )
        names = [Trigger(k).name.lower() for k in range(len(Trigger))]
        for t in range(self.T):
            w.writerow(
                [t] + [_fmt(v) for v in self.x[t]] + [_fmt(v) for v in self.u[t]]
                + [_fmt(self.cost[t]), _fmt(self.cum_regret[t]), int(self.episode[t]),
                   int(self.resample[t]), names[self.trigger[t]], _fmt(self.norm_z_Vinv[t])]
            )
        return fp.getvalue() if own else None


def _fmt(v) -> str:
    return repr(float(v))


class BoundedStateEvent(NamedTuple):
    X: float
    holds: bool


def bounded_state_event(trace: RegretTrace, X: float) -> BoundedStateEvent:
    return BoundedStateEvent(X, trace.max_state_norm <= X)


def _streams(seed):
    noise_ss, agent_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(noise_ss), np.random.default_rng(agent_ss)


def rollout(
    env: Environment,
    controller,
    T: int,
    seed: int = 0,
    lam: float | None = None,
    x0=None,
    noise_scale: float = 1.0,
    blowup: float = BLOWUP_THRESHOLD,
) -> RegretTrace:
    """Simulate ``T`` steps of ``controller`` on ``env`` from ``x_0 = 0``.

    The seed is split into a noise stream and a controller stream, and the
    controller is ``reset`` with the latter. The rollout owns the RLS state
    and hands it to the controller each step. ``x0`` and ``noise_scale``
    exist for deterministic tests.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    noise_rng, agent_rng = _streams(seed)
    controller.reset(agent_rng)
    theta_star = env.theta_star.theta
    A, B = env.theta_star.A, env.theta_star.B
    Q, R = env.cost.Q, env.cost.R
    n, d = env.theta_star.n, env.theta_star.d
    lam = getattr(controller, "lam", 1.0) if lam is None else lam
    rls = RlsState(n, d, lam)
    std = env.noise_std * noise_scale

    xs = np.empty((T, n))
    us = np.empty((T, d))
    costs = np.empty(T)
    episode = np.empty(T, dtype=np.int64)
    resample = np.zeros(T, dtype=bool)
    trigger = np.zeros(T, dtype=np.int8)
    norm_z = np.empty(T)
    logdet = np.empty(T)
    err = np.empty(T)
    thetas = []
    ts_err = []

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(n)
    for t in range(T):
        u, resampled = controller.step(x, t, rls)
        if resampled:
            thetas.append(controller.theta_tilde.theta)
            ts_err.append(rls.weighted_error(thetas[-1]))
        z = np.concatenate([x, u])
        xs[t], us[t] = x, u
        costs[t] = x @ Q @ x + u @ R @ u
        episode[t] = controller.episode_index
        resample[t] = resampled
        trigger[t] = controller.trigger
        norm_z[t] = rls.norm_inv(z)
        logdet[t] = rls.log_det()
        err[t] = rls.weighted_error(theta_star)
        x_next = A @ x + B @ u + std @ noise_rng.standard_normal(n)
        if not np.all(np.abs(x_next) <= blowup):
            raise NumericalBlowup(f"|x| exceeded {blowup:g} at step {t + 1}")
        rls.update(z, x_next)
        x = x_next

    cum = np.cumsum(costs - env.J_star)
    return RegretTrace(
        x=xs, u=us, cost=costs, cum_regret=cum, episode=episode, resample=resample,
        trigger=trigger, norm_z_Vinv=norm_z, logdet_V=logdet, rls_error=err,
        x_final=x, episode_thetas=np.array(thetas), episode_ts_error=np.array(ts_err),
        J_star=env.J_star,
        noise_cov=env.noise_cov * noise_scale**2, lam=lam, logdet_final=rls.log_det(),
        rejection_attempts=getattr(controller, "rejection_attempts", 0),
    )


class Census(NamedTuple):
    K: int
    K_det: int
    K_len: int
    initial: int


def episode_census(trace: RegretTrace) -> Census:
    """Resample counts by trigger; ``K = K_det + K_len`` excludes the initial draw."""
    trig = trace.trigger
    k_det = int(np.sum(trig == Trigger.DETERMINANT))
    k_len = int(np.sum(trig == Trigger.LENGTH))
    initial = int(np.sum(trig == Trigger.INITIAL))
    assert k_det + k_len + initial == int(np.sum(trace.resample))
    return Census(k_det + k_len, k_det, k_len, initial)


@dataclass(frozen=True)
class ReplicationSummary:
    index: int
    seed: int
    regret: float = math.nan
    max_state: float = math.nan
    K: int = 0
    K_det: int = 0
    K_len: int = 0
    rejection_attempts: int = 0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    FIELDS = ("index", "seed", "regret", "max_state", "K", "K_det", "K_len",
              "rejection_attempts", "error")


def summarize(trace: RegretTrace, index: int, seed: int) -> ReplicationSummary:
    c = episode_census(trace)
    return ReplicationSummary(
        index=index, seed=seed, regret=trace.regret, max_state=trace.max_state_norm,
        K=c.K, K_det=c.K_det, K_len=c.K_len, rejection_attempts=trace.rejection_attempts,
    )


def _run_one(args):
    env, factory, T, index, seed, keep, rollout_kw = args
    try:
        trace = rollout(env, factory(), T, seed=seed, **rollout_kw)
    except Exception as exc:  # recorded per replication; the batch carries on
        return ReplicationSummary(index, seed, error=f"{type(exc).__name__}: {exc}"), None
    return summarize(trace, index, seed), (trace if keep else None)


def replicate(
    env: Environment,
    factory: Callable[[], object],
    T: int,
    n_replications: int,
    base_seed: int = 0,
    jobs: int = 1,
    keep_traces: bool = False,
    **rollout_kw,
):
    """Run ``n_replications`` rollouts with seeds ``base_seed + i``.

    ``factory()`` builds a fresh controller (it must be picklable when
    ``jobs > 1``). Results are ordered by replication index regardless of
    completion order. Returns the list of summaries, or ``(summaries,
    traces)`` when ``keep_traces`` is set.
    """
    if n_replications < 1:
        raise ValueError("n_replications must be >= 1")
    tasks = [(env, factory, T, i, base_seed + i, keep_traces, rollout_kw)
             for i in range(n_replications)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(task) for task in tasks]
    summaries = [r[0] for r in results]
    if keep_traces:
        return summaries, [r[1] for r in results]
    return summaries


def write_summary_csv(summaries, fp) -> None:
    w = csv.writer(fp, lineterminator="\n")
    w.writerow(ReplicationSummary.FIELDS)
    for s in summaries:
        row = []
        for name in ReplicationSummary.FIELDS:
            v = getattr(s, name)
            row.append(_fmt(v) if isinstance(v, float) else ("" if v is None else v))
        w.writerow(row)
