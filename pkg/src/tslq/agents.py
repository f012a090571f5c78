"""Controllers: Thompson sampling with rejection into the admissible set, and
the oracle, certainty-equivalence and 1-D grid-optimism baselines.

Every controller exposes the same small surface used by :func:`tslq.env.rollout`:
``reset(rng)``, ``act(x, t, rls) -> u`` and the per-step attributes
``theta_tilde``, ``trigger``, ``episode_index`` and ``rejection_attempts``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyAdmissibleSet,
    EmptyIntersection,
    NotOneDimensional,
    RejectionBudgetExceeded,
)
from .lq import (
    AdmissibleGrid,
    AdmissibleSet,
    CostMatrices,
    LqParams,
    admissible_grid,
    is_admissible,
    solve_riccati,
)
from .rls import ConfidenceParams, RlsState, beta

LOG2 = math.log(2.0)


class Trigger(enum.IntEnum):
    NONE = 0
    INITIAL = 1
    DETERMINANT = 2
    LENGTH = 3


@dataclass(frozen=True)
class TsConfig:
    tau: int
    conf: ConfidenceParams
    admissible: AdmissibleSet
    max_rejection_attempts: int = 100_000

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        if self.max_rejection_attempts < 1:
            raise ValueError("max_rejection_attempts must be >= 1")


def tau_cbrt(T: int) -> int:
    """Default episode cap ``ceil(T^{1/3})``."""
    tau = round(T ** (1.0 / 3.0))
    return tau if tau**3 >= T else tau + 1


@dataclass
class EpisodeState:
    theta_tilde: LqParams
    gain: np.ndarray
    t0: int
    V0_logdet: float
    episode_index: int
    termination_reason: Trigger = Trigger.NONE


def ts_perturbation(scaled_W: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """One draw of ``beta W eta`` with ``eta`` of shape ``(n + d, n)``."""
    return scaled_W @ rng.standard_normal((scaled_W.shape[0], n))


def ts_sample(
    rls: RlsState,
    conf: ConfidenceParams,
    admissible: AdmissibleSet,
    cost: CostMatrices,
    rng: np.random.Generator,
    max_attempts: int = 100_000,
    radius: float | None = None,
) -> tuple[LqParams, int]:
    """Draw ``theta_hat + beta W eta`` until the candidate is admissible.

    ``eta`` has i.i.d. standard normal entries and shape ``(n + d, n)``;
    ``W = V^{-1/2}``. ``radius`` overrides ``beta_t`` (used by diagnostics).
    Returns the accepted parameter and the number of draws it took.
    """
    b = beta(rls, conf) if radius is None else radius
    scaled_W = b * rls.inv_sqrt()
    n = rls.n
    candidate = rls.theta_hat
    for attempt in range(1, max_attempts + 1):
        candidate = rls.theta_hat + ts_perturbation(scaled_W, n, rng)
        params = LqParams.from_theta(candidate, n)
        if is_admissible(params, cost, admissible):
            return params, attempt
    raise RejectionBudgetExceeded(max_attempts, candidate, 0.0)


class _EpisodicController:
    """Shared episode bookkeeping; subclasses choose the next parameter."""

    lam = 1.0

    def __init__(self, cost: CostMatrices, rng=None):
        self.cost = cost
        self.reset(rng)

    def reset(self, rng=None):
        self.rng = rng if rng is not None else np.random.default_rng()
        self.episode: EpisodeState | None = None
        self.trigger = Trigger.NONE
        self.rejection_attempts = 0

    @property
    def theta_tilde(self) -> LqParams | None:
        return None if self.episode is None else self.episode.theta_tilde

    @property
    def episode_index(self) -> int:
        return -1 if self.episode is None else self.episode.episode_index

    def _trigger(self, t: int, log_det: float) -> Trigger:
        raise NotImplementedError

    def _choose(self, rls: RlsState) -> LqParams:
        raise NotImplementedError

    def step(self, x, t: int, rls: RlsState):
        """Return ``(u, resampled)``; resample when the episode trigger fires."""
        log_det = rls.log_det()
        trig = self._trigger(t, log_det)
        if trig is not Trigger.NONE:
            theta = self._choose(rls)
            gain = solve_riccati(theta, self.cost).K
            index = 0 if self.episode is None else self.episode.episode_index + 1
            self.episode = EpisodeState(theta, gain, t, log_det, index, trig)
        self.trigger = trig
        x = np.asarray(x, dtype=float).ravel()
        return self.episode.gain @ x, trig is not Trigger.NONE

    def act(self, x, t: int, rls: RlsState) -> np.ndarray:
        return self.step(x, t, rls)[0]


class TsAgent(_EpisodicController):
    """Thompson sampling: resample when ``det V_t > 2 det V_0`` or ``t >= t_0 + tau``."""

    def __init__(self, cost: CostMatrices, config: TsConfig, lam: float = 1.0, rng=None):
        self.config = config
        self.lam = lam
        super().__init__(cost, rng)

    def _trigger(self, t, log_det):
        ep = self.episode
        if ep is None:
            return Trigger.INITIAL
        if log_det > ep.V0_logdet + LOG2:
            return Trigger.DETERMINANT
        if t >= ep.t0 + self.config.tau:
            return Trigger.LENGTH
        return Trigger.NONE

    def _choose(self, rls):
        cfg = self.config
        theta, attempts = ts_sample(
            rls, cfg.conf, cfg.admissible, self.cost, self.rng, cfg.max_rejection_attempts
        )
        self.rejection_attempts += attempts
        return theta


def ts_step(agent: TsAgent, x, rls: RlsState, t: int):
    """One step of the TS controller: ``(u, agent, resampled)``."""
    u, resampled = agent.step(x, t, rls)
    return u, agent, resampled


class OracleController(_EpisodicController):
    """Stationary optimal controller ``u = K(theta_*) x``."""

    def __init__(self, theta_star: LqParams, cost: CostMatrices, rng=None):
        self.theta_star = theta_star
        self.gain = solve_riccati(theta_star, cost).K
        super().__init__(cost, rng)

    def _trigger(self, t, log_det):
        return Trigger.INITIAL if self.episode is None else Trigger.NONE

    def _choose(self, rls):
        return self.theta_star


def oracle_controller(theta_star: LqParams, cost: CostMatrices) -> OracleController:
    return OracleController(theta_star, cost)


def project_to_grid(theta: LqParams, grid: AdmissibleGrid) -> LqParams:
    """Nearest admissible grid point (Euclidean); ties go to the smallest ``(A, B)``."""
    if len(grid) == 0:
        raise EmptyAdmissibleSet("admissible grid is empty")
    a, b = float(theta.A[0, 0]), float(theta.B[0, 0])
    dist = (grid.A - a) ** 2 + (grid.B - b) ** 2
    i = int(np.argmin(dist))
    return LqParams.scalar(grid.A[i], grid.B[i])


class CeController(TsAgent):
    """Certainty equivalence on the TS schedule: ``u = K(proj_S(theta_hat)) x``."""

    def __init__(self, cost, config: TsConfig, lam: float = 1.0, rng=None, grid_step: float = 0.01):
        self._grid = None
        self.grid_step = grid_step
        super().__init__(cost, config, lam, rng)

    @property
    def grid(self) -> AdmissibleGrid:
        if self._grid is None:
            self._grid = admissible_grid(self.config.admissible, self.cost, self.grid_step)
        return self._grid

    def _choose(self, rls):
        theta = LqParams.from_theta(rls.theta_hat, rls.n)
        if is_admissible(theta, self.cost, self.config.admissible):
            return theta
        if rls.n != 1 or rls.d != 1:
            raise NotOneDimensional("projection onto S is only implemented for n = d = 1")
        return project_to_grid(theta, self.grid)


class Ofu1dController(_EpisodicController):
    """Grid stand-in for OFU: minimise ``J`` over the gridded ``E_t^RLS`` cap ``S``.

    The parameter is recomputed only when ``det V`` doubles.
    """

    def __init__(self, cost, conf: ConfidenceParams, admissible: AdmissibleSet,
                 lam: float = 1.0, grid_step: float = 0.01, rng=None):
        if conf.n != 1 or conf.d != 1:
            raise NotOneDimensional("the grid OFU controller requires n = d = 1")
        self.conf = conf
        self.admissible = admissible
        self.lam = lam
        self.grid = admissible_grid(admissible, cost, grid_step)
        super().__init__(cost, rng)

    def _trigger(self, t, log_det):
        ep = self.episode
        if ep is None:
            return Trigger.INITIAL
        if log_det > ep.V0_logdet + LOG2:
            return Trigger.DETERMINANT
        return Trigger.NONE

    def _choose(self, rls):
        return ofu_select(rls, self.conf, self.grid)


def ofu_select(rls: RlsState, conf: ConfidenceParams, grid: AdmissibleGrid) -> LqParams:
    """``argmin J`` over admissible grid points with ``|theta - theta_hat|_V <= beta``."""
    radius = beta(rls, conf)
    diff = grid.thetas - rls.theta_hat[:, 0]
    dist2 = np.einsum("ij,jk,ik->i", diff, rls.V, diff)
    inside = np.flatnonzero(dist2 <= radius * radius)
    if inside.size == 0:
        raise EmptyIntersection("no grid point inside the confidence ellipsoid and S")
    i = inside[int(np.argmin(grid.P[inside]))]
    return LqParams.scalar(grid.A[i], grid.B[i])


ALGORITHMS = ("ts", "ce", "ofu1d", "oracle")


@dataclass(frozen=True)
class AgentFactory:
    """Picklable recipe ``(T, tau) -> controller`` for batch runs.

    ``theta_star`` is only read by the oracle.
    """

    algorithm: str
    cost: CostMatrices
    admissible: AdmissibleSet
    lam: float = 1.0
    delta: float = 0.05
    L: float = 1.0
    theta_star: LqParams | None = None
    max_rejection_attempts: int = 100_000
    grid_step: float = 0.01

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.algorithm == "oracle" and self.theta_star is None:
            raise ValueError("the oracle needs theta_star")

    def confidence(self, T: int) -> ConfidenceParams:
        n, d = self.cost.Q.shape[0], self.cost.R.shape[0]
        return ConfidenceParams(self.delta, self.admissible.S, n, d, T, self.L)

    def __call__(self, T: int, tau: int):
        if self.algorithm == "oracle":
            return OracleController(self.theta_star, self.cost)
        conf = self.confidence(T)
        if self.algorithm == "ofu1d":
            return Ofu1dController(self.cost, conf, self.admissible, self.lam, self.grid_step)
        cfg = TsConfig(tau, conf, self.admissible, self.max_rejection_attempts)
        if self.algorithm == "ce":
            return CeController(self.cost, cfg, self.lam, grid_step=self.grid_step)
        return TsAgent(self.cost, cfg, self.lam)
