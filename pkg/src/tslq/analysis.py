"""Optimism, regret decomposition, bound reports, Poincaré checks and regret scaling."""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.integrate import simpson
from scipy.special import erfc

from .agents import tau_cbrt
from .env import Environment, RegretTrace, episode_census, replicate
from .errors import (
    AllRunsFailed,
    DimensionMismatch,
    MissingThetaTilde,
    NotOneDimensional,
    RejectionBudgetExceeded,
    WeightNotLogConcave,
)
from .lq import (
    AdmissibleSet,
    CostMatrices,
    LqParams,
    admissible_set_constants,
    riccati_1d_batch,
    solve_riccati,
)
from .rls import ConfidenceParams, beta_from_logdet, gamma_factor

SQRT2 = math.sqrt(2.0)


def normal_cdf(x):
    """Standard normal CDF through ``erfc`` (accurate in both tails)."""
    return 0.5 * erfc(-np.asarray(x, dtype=float) / SQRT2)


# ---------------------------------------------------------------------------
# optimism


def optimism_lower_bound(rho_star: float, beta_T: float, C: float, lam: float) -> float:
    """``Phi(1 + 2 rho / (beta sqrt((1 + C^2) / lam))) - Phi(1)``."""
    if rho_star < 0:
        raise ValueError("rho_star must be non-negative")
    if not (beta_T > 0 and lam > 0):
        raise ValueError("beta_T and lam must be positive")
    width = 2.0 * rho_star / (beta_T * math.sqrt((1.0 + C * C) / lam))
    # Phi(1 + w) - Phi(1) = (erfc(1/sqrt2) - erfc((1 + w)/sqrt2)) / 2
    return float(0.5 * (erfc(1.0 / SQRT2) - erfc((1.0 + width) / SQRT2)))


def worst_case_center(theta_star: LqParams, V, beta: float, cost: CostMatrices) -> np.ndarray:
    """Centre on the ``beta``-ellipsoid boundary that pushes ``theta' H*`` furthest from zero."""
    sol = solve_riccati(theta_star, cost)
    H = sol.H
    V = np.asarray(V, dtype=float)
    VinvH = np.linalg.solve(V, H)
    norm = math.sqrt(float(np.trace(H.T @ VinvH)))
    sign = 1.0 if float(np.trace(sol.A_c)) >= 0 else -1.0
    return theta_star.theta + sign * beta * VinvH / norm


@dataclass(frozen=True)
class OptimismReport:
    p_lower: float
    p_hat: float
    p_lin_hat: float
    n_samples: int
    se_hat: float
    se_lin: float
    inclusion_violations: int
    attempts: int
    J_star: float
    rho_star: float

    @property
    def acceptance_rate(self) -> float:
        return self.n_samples / self.attempts

    @property
    def lin_within_opt(self) -> bool:
        """``p_lin_hat <= p_hat + 3 SE``, the Monte Carlo face of the inclusion."""
        return self.p_lin_hat <= self.p_hat + 3.0 * self.se_hat

    @property
    def bound_respected(self) -> bool:
        return self.p_hat >= self.p_lower - 3.0 * self.se_hat


def estimate_optimism(
    theta_star: LqParams,
    theta_hat,
    V,
    beta: float,
    cost: CostMatrices,
    admissible: AdmissibleSet,
    n_samples: int,
    rng: np.random.Generator,
    lam: float = 1.0,
    C: float | None = None,
    max_attempts: int = 100_000,
    batch: int = 65_536,
    slack: float = 1e-9,
) -> OptimismReport:
    """Monte Carlo frequency of optimistic TS draws in the scalar system.

    Candidates ``theta_hat + beta V^{-1/2} eta`` are drawn in batches and
    kept when admissible, which is the same law as one-at-a-time rejection.
    ``C`` defaults to the admissible-set constant (or its grid estimate),
    raised to ``|K(theta_*)|`` if smaller.
    """
    if theta_star.n != 1 or theta_star.d != 1:
        raise NotOneDimensional("optimism estimates are implemented for n = d = 1")
    th_hat = (theta_hat.theta if isinstance(theta_hat, LqParams) else np.asarray(theta_hat, float)).reshape(2)
    V = np.asarray(V, dtype=float)
    if V.shape != (2, 2):
        raise DimensionMismatch("V must be 2x2")
    sol = solve_riccati(theta_star, cost)
    J_star = sol.J
    H = sol.H[:, 0]
    rho_star = abs(float(sol.A_c[0, 0]))
    if C is None:
        C = admissible.C if admissible.C is not None else admissible_set_constants(admissible, cost)[1]
    C = max(C, abs(float(sol.K[0, 0])))

    w, U = np.linalg.eigh(V)
    scaled_W = beta * (U / np.sqrt(w)) @ U.T
    q, r = float(cost.Q[0, 0]), float(cost.R[0, 0])

    kept = []
    n_kept = attempts = since_accept = 0
    while n_kept < n_samples:
        cand = th_hat + rng.standard_normal((batch, 2)) @ scaled_W.T
        attempts += batch
        inside = np.sum(cand * cand, axis=1) <= admissible.S2
        P = np.full(batch, np.inf)
        P[inside] = riccati_1d_batch(cand[inside, 0], cand[inside, 1], q, r, trace_cap=admissible.D)
        ok = np.flatnonzero(P <= admissible.D)
        if ok.size == 0:
            since_accept += batch
            if since_accept >= max_attempts:
                raise RejectionBudgetExceeded(since_accept, cand[-1], n_kept / attempts)
            continue
        since_accept = batch - 1 - int(ok[-1])
        take = ok[: n_samples - n_kept]
        if take.size < ok.size:
            attempts -= batch - 1 - int(take[-1])
        kept.append(np.column_stack([cand[take], P[take]]))
        n_kept += take.size

    samples = np.vstack(kept)
    J = samples[:, 2]
    opt = J <= J_star
    lin = np.abs(samples[:, :2] @ H) <= rho_star
    violations = int(np.sum(lin & (J > J_star + slack)))
    p_hat, p_lin = float(np.mean(opt)), float(np.mean(lin))
    N = samples.shape[0]
    return OptimismReport(
        p_lower=optimism_lower_bound(rho_star, beta, C, lam),
        p_hat=p_hat, p_lin_hat=p_lin, n_samples=N,
        se_hat=math.sqrt(p_hat * (1 - p_hat) / N), se_lin=math.sqrt(p_lin * (1 - p_lin) / N),
        inclusion_violations=violations, attempts=attempts, J_star=J_star, rho_star=rho_star,
    )


def gaussian_interval_prob(xbar, rho: float, sigma: float):
    """``P(|x| <= rho)`` for ``x ~ N(xbar, sigma^2)``; ``sigma = 0`` gives the indicator."""
    a = np.abs(np.asarray(xbar, dtype=float))
    if sigma == 0:
        return (a <= rho).astype(float)
    s = sigma * SQRT2
    return 0.5 * (erfc((a - rho) / s) - erfc((a + rho) / s))


def gaussian_cdf_monotonicity_check(rho: float, sigma: float, centers, tol: float = 1e-12) -> bool:
    """Is ``P(|x| <= rho)`` non-decreasing on ``xbar <= 0`` and non-increasing on ``xbar >= 0``?"""
    if not (rho > 0 and sigma >= 0):
        raise ValueError("rho must be positive and sigma non-negative")
    c = np.sort(np.asarray(centers, dtype=float).ravel())
    f = gaussian_interval_prob(c, rho, sigma)
    neg, pos = c <= 0, c >= 0
    return bool(np.all(np.diff(f[neg]) >= -tol) and np.all(np.diff(f[pos]) <= tol))


# ---------------------------------------------------------------------------
# regret decomposition


@dataclass(frozen=True)
class RegretDecomposition:
    """The four displayed regret terms and the raw regret.

    ``residual = R_total - (R_TS + R_RLS_1 + R_RLS_2 + R_RLS_3)`` is reported,
    not asserted to vanish. ``steps`` holds the per-step terms in that order.
    """

    R_TS: float
    R_RLS_1: float
    R_RLS_2: float
    R_RLS_3: float
    R_total: float
    alpha: float
    steps: np.ndarray = field(repr=False)

    @property
    def residual(self) -> float:
        return self.R_total - (self.R_TS + self.R_RLS_1 + self.R_RLS_2 + self.R_RLS_3)


def _episode_solutions(trace: RegretTrace, cost: CostMatrices):
    if trace.episode_thetas is None or len(trace.episode_thetas) == 0 or np.any(trace.episode < 0):
        raise MissingThetaTilde("the trace carries no sampled parameters")
    return [solve_riccati(LqParams.from_theta(th, trace.n), cost) for th in trace.episode_thetas]


def decompose_regret(
    trace: RegretTrace, theta_star: LqParams, cost: CostMatrices, C: float | None = None
) -> RegretDecomposition:
    """Evaluate the optimality, martingale, consistency and prediction regret terms.

    Conditional expectations of ``x' M x'`` use the closed form
    ``m' M m + Tr(M Sigma)`` with ``m = theta_*' z_t``. The parameter after
    the final step is taken to be the last one used. ``C`` (for ``alpha``)
    defaults to the largest realised ``|K(theta_tilde)|_2``.
    """
    sols = _episode_solutions(trace, cost)
    P_ep = np.array([s.P for s in sols])
    J_ep = np.array([s.J for s in sols])
    ep = trace.episode
    ep_next = np.append(ep[1:], ep[-1])
    P_t, P_n = P_ep[ep], P_ep[ep_next]
    z = trace.z
    m = z @ theta_star.theta
    Sigma = trace.noise_cov
    x = trace.x

    def quad(P, v):
        return np.einsum("ti,tij,tj->t", v, P, v)

    def tr(P):
        return np.einsum("tij,ji->t", P, Sigma)

    pred = np.einsum("ti,tij->tj", z, trace.theta_tilde)
    r_ts = J_ep[ep] - trace.J_star
    r1 = quad(P_n, m) + tr(P_n) - quad(P_t, x)
    r2 = quad(P_t - P_n, m) + tr(P_t - P_n)
    r3 = quad(P_t, pred) - quad(P_t, m)
    steps = np.column_stack([r_ts, r1, r2, r3])
    if C is None:
        C = max(float(np.linalg.norm(s.K, 2)) for s in sols)
    X = trace.max_state_norm
    q2, r2n = float(np.linalg.norm(cost.Q, 2)), float(np.linalg.norm(cost.R, 2))
    alpha = X * (q2 + r2n * C * C) / trace.J_star
    tot = steps.sum(axis=0)
    return RegretDecomposition(
        R_TS=float(tot[0]), R_RLS_1=float(tot[1]), R_RLS_2=float(tot[2]), R_RLS_3=float(tot[3]),
        R_total=trace.regret, alpha=alpha, steps=steps,
    )


# ---------------------------------------------------------------------------
# theory bounds


@dataclass(frozen=True)
class BoundCheck:
    name: str
    realized: float
    bound: float
    assertion: bool  # False: diagnostic only

    @property
    def holds(self) -> bool:
        return self.realized <= self.bound

    @property
    def failed(self) -> bool:
        return self.assertion and not self.holds


@dataclass(frozen=True)
class BoundReport:
    checks: tuple[BoundCheck, ...]
    rls_event: bool
    ts_event: bool
    X: float
    C: float
    decomposition: RegretDecomposition
    scaling_terms: dict

    @property
    def events_held(self) -> bool:
        return self.rls_event and self.ts_event

    @property
    def ok(self) -> bool:
        return not any(c.failed for c in self.checks)

    def __getitem__(self, name: str) -> BoundCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_text(self) -> str:
        lines = [
            f"events: rls={'held' if self.rls_event else 'violated'} "
            f"ts={'held' if self.ts_event else 'violated'}  X={self.X:.6g}  C={self.C:.6g}"
        ]
        for c in self.checks:
            grade = "assert" if c.assertion else "diag"
            verdict = "ok" if c.holds else ("FAIL" if c.assertion else "exceeds")
            lines.append(f"  {c.name:<14} realized={c.realized:<14.6g} bound={c.bound:<14.6g} [{grade}] {verdict}")
        return "\n".join(lines)


def theory_bound_report(
    trace: RegretTrace,
    theta_star: LqParams,
    cost: CostMatrices,
    conf: ConfidenceParams,
    admissible: AdmissibleSet,
    tau: int | None = None,
) -> BoundReport:
    """Evaluate the closed-form regret-term and episode bounds with realised constants.

    ``X`` is the realised state maximum and ``C`` the larger of the
    admissible-set constant and the largest realised gain norm, so that
    ``|z_t|^2 <= (1 + C^2) X^2`` holds on the trace. The regret-term bounds
    are assertions only when the RLS confidence event held at every step and
    every draw landed in its own sampling ellipsoid.
    """
    dec = decompose_regret(trace, theta_star, cost)
    sols = _episode_solutions(trace, cost)
    lam, T = trace.lam, trace.T
    n, d = trace.n, trace.d
    p = n + d
    X = trace.max_state_norm
    C = max(
        admissible.C if admissible.C is not None else 0.0,
        max(float(np.linalg.norm(s.K, 2)) for s in sols),
    )
    Z2 = (1.0 + C * C) * X * X
    D, S = admissible.D, admissible.S
    delta = conf.delta
    log_det0 = p * math.log(lam)

    betas = np.array([beta_from_logdet(v, log_det0, conf, lam) for v in trace.logdet_V])
    rls_event = bool(np.all(trace.rls_error <= betas))
    starts = np.flatnonzero(trace.resample)
    gammas = betas[starts] * gamma_factor(conf)
    ts_err = trace.episode_ts_error
    ts_event = ts_err is not None and len(ts_err) == len(starts) and bool(np.all(ts_err <= gammas))
    events = rls_event and ts_event

    beta_T = beta_from_logdet(trace.logdet_final, log_det0, conf, lam)
    mu_T = beta_T * (1.0 + gamma_factor(conf))
    sum_z = float(np.sum(trace.norm_z_Vinv))
    census = episode_census(trace)

    checks = [
        BoundCheck("R_RLS_1", dec.R_RLS_1, 2 * D * X * X * math.sqrt(2 * T * math.log(4 / delta)), events),
        BoundCheck("R_RLS_3", dec.R_RLS_3, 4 * S * D * math.sqrt(Z2) * mu_T * sum_z, events),
        BoundCheck("R_RLS_2", dec.R_RLS_2, 2 * X * X * D * census.K, False),
        BoundCheck(
            "sum_norm_z", sum_z,
            math.sqrt(T) * math.sqrt(2 * p * Z2 / lam) * math.sqrt(math.log1p(T * Z2 / (lam * p))),
            events,
        ),
        BoundCheck("K_det", census.K_det, p * math.log2(1 + T * Z2 / lam), True),
    ]
    terms = {}
    if tau is not None:
        checks.append(BoundCheck("K_len", census.K_len, math.ceil(T / tau), True))
        terms = {"T/tau": T / tau, "tau*sqrt(T/tau)": tau * math.sqrt(T / tau)}
    return BoundReport(tuple(checks), rls_event, ts_event, X, C, dec, terms)


# ---------------------------------------------------------------------------
# weighted Poincare inequality


class PoincareResult(NamedTuple):
    lhs: float
    rhs: float
    holds: bool


def _check_log_concave(w: np.ndarray, tol: float) -> None:
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise WeightNotLogConcave("weight must be finite and non-negative")
    pos = np.flatnonzero(w > 0)
    if pos.size == 0:
        raise WeightNotLogConcave("weight vanishes identically")
    if pos[-1] - pos[0] + 1 != pos.size:
        raise WeightNotLogConcave("support of the weight is not an interval")
    lw = np.log(w[pos])
    # midpoint concavity: log w(x_i) >= (log w(x_{i-1}) + log w(x_{i+1})) / 2
    second = lw[2:] - 2 * lw[1:-1] + lw[:-2]
    if np.any(second > tol * (1 + np.abs(lw[1:-1]))):
        raise WeightNotLogConcave("log of the weight fails discrete midpoint concavity")


def poincare_check_1d(
    f: Callable,
    rho: Callable,
    L: float,
    resolution: int = 10_001,
    fprime: Callable | None = None,
    tol: float | None = None,
) -> PoincareResult:
    """Check ``int |f| rho <= 2 L int |f'| rho`` on ``[0, L]`` after centring ``f``.

    ``f`` is shifted by its ``rho``-weighted mean so that ``int f rho = 0``.
    Integrals use composite Simpson on ``resolution`` uniform points;
    ``f'`` is differentiated numerically unless ``fprime`` is given.
    """
    if L <= 0 or resolution < 3:
        raise ValueError("need L > 0 and at least 3 quadrature points")
    x = np.linspace(0.0, L, resolution)
    w = np.asarray(rho(x), dtype=float) * np.ones_like(x)
    _check_log_concave(w, 1e-9)
    fv = np.asarray(f(x), dtype=float) * np.ones_like(x)
    mass = simpson(w, x=x)
    fc = fv - simpson(fv * w, x=x) / mass
    df = np.asarray(fprime(x), dtype=float) * np.ones_like(x) if fprime else np.gradient(fv, x, edge_order=2)
    lhs = float(simpson(np.abs(fc) * w, x=x))
    rhs = float(2.0 * L * simpson(np.abs(df) * w, x=x))
    if tol is None:
        tol = 1e-8 * (1.0 + rhs)
    return PoincareResult(lhs, rhs, lhs <= rhs + tol)


# ---------------------------------------------------------------------------
# regret scaling


@dataclass(frozen=True)
class ScalingFit:
    """Log-log regret fit over horizons with bootstrap intervals."""

    horizons: tuple[int, ...]
    means: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    n_ok: tuple[int, ...]
    slope: float
    intercept: float
    slope_ci: tuple[float, float]
    regrets: tuple[np.ndarray, ...] = field(repr=False)

    @property
    def ratio_T23(self) -> np.ndarray:
        """``mean R(T) / T^{2/3}`` per horizon."""
        return self.means / np.asarray(self.horizons, dtype=float) ** (2.0 / 3.0)

    @property
    def ratio_trend(self) -> float:
        """Largest-horizon ratio over smallest-horizon ratio."""
        r = self.ratio_T23
        return float(r[-1] / r[0])

    def rows(self):
        return [(T, float(m), float(lo), float(hi))
                for T, m, lo, hi in zip(self.horizons, self.means, self.ci_lo, self.ci_hi)]

    def to_csv(self, fp) -> None:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(["T", "mean", "ci_lo", "ci_hi"])
        for T, m, lo, hi in self.rows():
            w.writerow([T, repr(m), repr(lo), repr(hi)])


def _loglog_slope(logT: np.ndarray, means: np.ndarray):
    """Least-squares slope and intercept of ``log max(mean, 1)`` on ``log T`` (last axis)."""
    y = np.log(np.maximum(means, 1.0))
    xc = logT - logT.mean()
    slope = (y * xc).sum(axis=-1) / (xc * xc).sum()
    return slope, y.mean(axis=-1) - slope * logT.mean()


def fit_slope(horizons: Sequence[int], regrets: Sequence[np.ndarray], n_boot: int = 2000,
              level: float = 0.95, seed: int = 0) -> ScalingFit:
    """Fit the exponent from per-horizon regret samples (percentile bootstrap)."""
    horizons = tuple(int(T) for T in horizons)
    if len(horizons) < 3 or any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise ValueError("need at least 3 strictly increasing horizons")
    regrets = tuple(np.asarray(r, dtype=float) for r in regrets)
    for T, r in zip(horizons, regrets):
        if r.size == 0:
            raise AllRunsFailed(f"every replication failed at T={T}")
    logT = np.log(np.asarray(horizons, dtype=float))
    means = np.array([r.mean() for r in regrets])
    slope, intercept = _loglog_slope(logT, means)
    rng = np.random.default_rng(seed)
    boot = np.column_stack([r[rng.integers(0, r.size, (n_boot, r.size))].mean(axis=1) for r in regrets])
    boot_slopes, _ = _loglog_slope(logT, boot)
    a = (1.0 - level) / 2.0
    lo, hi = np.quantile(boot, [a, 1 - a], axis=0)
    s_lo, s_hi = np.quantile(boot_slopes, [a, 1 - a])
    return ScalingFit(
        horizons=horizons, means=means, ci_lo=lo, ci_hi=hi, n_ok=tuple(r.size for r in regrets),
        slope=float(slope), intercept=float(intercept), slope_ci=(float(s_lo), float(s_hi)),
        regrets=regrets,
    )


def fit_regret_exponent(
    env: Environment,
    agent_factory: Callable[[int, int], object],
    horizons: Sequence[int],
    tau_rule: Callable[[int], int] = tau_cbrt,
    replications: int = 20,
    base_seed: int = 0,
    jobs: int = 1,
    n_boot: int = 2000,
    level: float = 0.95,
    return_summaries: bool = False,
):
    """Replicate rollouts at each horizon and fit ``log mean R(T)`` against ``log T``.

    ``agent_factory(T, tau)`` builds a fresh controller; it must be picklable
    for ``jobs > 1``. Replication ``i`` uses seed ``base_seed + i`` at every
    horizon. Failed replications are dropped; a horizon with none left raises
    :class:`AllRunsFailed`.
    """
    horizons = [int(T) for T in horizons]
    if math.log10(horizons[-1] / horizons[0]) < 1.5 - 1e-12:
        raise ValueError("horizons must span at least 1.5 decades")
    all_summaries, regrets = [], []
    for T in horizons:
        factory = functools.partial(agent_factory, T, tau_rule(T))
        summaries = replicate(env, factory, T, replications, base_seed=base_seed, jobs=jobs)
        all_summaries.append(summaries)
        regrets.append(np.array([s.regret for s in summaries if s.ok]))
    fit = fit_slope(horizons, regrets, n_boot=n_boot, level=level, seed=base_seed)
    return (fit, all_summaries) if return_summaries else fit


__all__ = [
    "BoundCheck", "BoundReport", "OptimismReport", "PoincareResult", "RegretDecomposition",
    "ScalingFit", "decompose_regret", "estimate_optimism", "fit_regret_exponent",
    "fit_slope", "gaussian_cdf_monotonicity_check", "gaussian_interval_prob", "normal_cdf",
    "optimism_lower_bound", "poincare_check_1d", "theory_bound_report", "worst_case_center",
]
