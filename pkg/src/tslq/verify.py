"""Numerical verification suite driven by a :class:`~tslq.config.Scenario`.

Each group returns :class:`CheckResult` rows. Assertion-grade rows decide the
exit status; diagnostic rows are informational.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .analysis import (
    estimate_optimism,
    gaussian_cdf_monotonicity_check,
    poincare_check_1d,
    theory_bound_report,
    worst_case_center,
)
from .agents import AgentFactory
from .config import Scenario
from .env import episode_census, rollout
from .errors import TslqError
from .lq import (
    CostMatrices,
    LqParams,
    average_cost_1d,
    grad_J,
    gradient_inequality_check,
    is_admissible,
    riccati_residual,
    solve_riccati,
)
from .rls import ConfidenceParams, beta_from_logdet, rls_coverage_experiment, self_normalized_sum


@dataclass(frozen=True)
class CheckResult:
    group: str
    name: str
    passed: bool
    assertion: bool = True
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else ("FAIL" if self.assertion else "NOTE")
        grade = "" if self.assertion else " (diagnostic)"
        return f"[{tag}] {self.group}/{self.name}{grade}: {self.detail}"


def random_stabilizable(rng, n: int, d: int, scale: float = 0.9):
    """Draw ``(A, B)`` with ``A`` rescaled to spectral radius below ``scale`` (hence stabilizable)."""
    A = rng.standard_normal((n, n))
    A *= rng.uniform(0.1, scale) / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-12)
    B = rng.standard_normal((n, d))
    return LqParams(A, B)


def random_admissible_1d(sc: Scenario, rng, count: int):
    """Rejection-sample scalar parameters from the scenario's admissible set."""
    S = sc.admissible
    out = []
    while len(out) < count:
        a, b = rng.uniform(-S.S, S.S, 2)
        th = LqParams.scalar(a, b)
        if is_admissible(th, sc.cost, S):
            out.append(th)
    return out


def _fd_grad(theta: LqParams, cost, h=1e-6):
    base = theta.theta
    g = np.empty_like(base)
    for idx in np.ndindex(base.shape):
        e = np.zeros_like(base)
        e[idx] = h
        jp = solve_riccati(LqParams.from_theta(base + e, theta.n), cost).J
        jm = solve_riccati(LqParams.from_theta(base - e, theta.n), cost).J
        g[idx] = (jp - jm) / (2 * h)
    return g


def check_riccati(sc: Scenario, rng):
    worst_res, worst_rad, cases = 0.0, 0.0, 0
    for _ in range(sc.verify["random_cases"]):
        n, d = rng.integers(1, 4, 2)
        th = random_stabilizable(rng, int(n), int(d))
        cost = CostMatrices(np.eye(n), np.eye(d))
        sol = solve_riccati(th, cost)
        worst_res = max(worst_res, riccati_residual(th, cost, sol))
        worst_rad = max(worst_rad, float(np.max(np.abs(np.linalg.eigvals(sol.A_c)))))
        cases += 1
    sol = solve_riccati(sc.theta_star, sc.cost)
    own = riccati_residual(sc.theta_star, sc.cost, sol)
    return [
        CheckResult("riccati", "random_residual", worst_res <= 1e-9 and worst_rad < 1,
                    detail=f"{cases} cases, max residual {worst_res:.2e}, max spectral radius {worst_rad:.4f}"),
        CheckResult("riccati", "theta_star", own <= 1e-9,
                    detail=f"J*={sol.J:.10g}, residual {own:.2e}"),
    ]


def check_cost_identity(sc: Scenario, rng):
    if sc.theta_star.n != 1 or sc.theta_star.d != 1:
        return [CheckResult("cost_identity", "skipped", True, False, "scalar systems only")]
    worst = 0.0
    for th in random_admissible_1d(sc, rng, sc.verify["random_cases"]):
        J = solve_riccati(th, sc.cost).J
        worst = max(worst, abs(average_cost_1d(th, sc.cost) - J) / (1 + J))
    return [CheckResult("cost_identity", "closed_form", worst <= 1e-8,
                        detail=f"max |J_closed - Tr P| / (1 + J) = {worst:.2e}")]


def check_gradient(sc: Scenario, rng):
    worst = 0.0
    for _ in range(sc.verify["random_cases"]):
        n, d = (int(v) for v in rng.integers(1, 4, 2))
        th = random_stabilizable(rng, n, d, scale=0.8)
        cost = CostMatrices(np.eye(n), np.eye(d))
        g, fd = grad_J(th, cost), _fd_grad(th, cost)
        worst = max(worst, float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12)))
    return [CheckResult("gradient", "finite_difference", worst <= 1e-5,
                        detail=f"max relative error {worst:.2e}")]


def check_gradient_inequality(sc: Scenario, rng):
    failures = 0
    count = sc.verify["random_cases"]
    for _ in range(count):
        n, d = (int(v) for v in rng.integers(1, 4, 2))
        th = random_stabilizable(rng, n, d)
        M = rng.standard_normal((n + d, n + d))
        V = M @ M.T + 0.1 * np.eye(n + d)
        failures += not gradient_inequality_check(th, CostMatrices(np.eye(n), np.eye(d)), V)
    return [CheckResult("gradient_inequality", "random_pairs", failures == 0,
                        detail=f"{failures} violations in {count} pairs")]


def check_coverage(sc: Scenario, rng):
    th = sc.theta_star
    sol = solve_riccati(th, sc.cost)
    conf = ConfidenceParams(sc.delta, sc.admissible.S, th.n, th.d, 1, sc.raw["learner"]["L"])
    cov = rls_coverage_experiment(
        th, sol.K, sc.verify["coverage_T"], sc.verify["coverage_replications"], conf,
        lam=sc.lam, seed=int(rng.integers(2**31)),
    )
    return [CheckResult("coverage", "simultaneous", cov >= 1 - sc.delta,
                        detail=f"coverage {cov:.4f} vs 1 - delta = {1 - sc.delta:.4f}")]


def _traces(sc: Scenario, rng):
    T = sc.verify["trace_T"]
    tau = sc.tau(T)
    base = int(rng.integers(2**31))
    out = []
    for i in range(sc.verify["trace_runs"]):
        ctrl = sc.factory(T, tau)
        out.append(rollout(sc.env, ctrl, T, seed=base + i, lam=sc.lam, blowup=sc.raw["guards"]["blowup"]))
    return T, tau, out


def check_self_normalized(sc: Scenario, rng, traces=None):
    _, _, traces = traces or _traces(sc, rng)
    if sc.lam < 1:
        return [CheckResult("self_normalized", "skipped", True, False, "requires lambda >= 1")]
    violations = 0
    for tr in traces:
        sums, bounds = self_normalized_sum(tr.z, sc.lam, prefixes=True)
        violations += int(np.sum(sums > bounds + 1e-9))
    return [CheckResult("self_normalized", "prefixes", violations == 0,
                        detail=f"{violations} violating prefixes over {len(traces)} traces")]


def check_optimism(sc: Scenario, rng):
    th = sc.theta_star
    if th.n != 1 or th.d != 1:
        return [CheckResult("optimism", "skipped", True, False, "scalar systems only")]
    T = 1000
    ts = AgentFactory("ts", sc.cost, sc.admissible, sc.lam, sc.delta, sc.raw["learner"]["L"])
    tr = rollout(sc.env, ts(T, sc.tau(T)), T, seed=int(rng.integers(2**31)), lam=sc.lam)
    V = sc.lam * np.eye(2) + tr.z.T @ tr.z
    conf = ConfidenceParams(sc.delta, sc.admissible.S, 1, 1, T, sc.raw["learner"]["L"])
    beta_T = beta_from_logdet(np.linalg.slogdet(V)[1], 2 * math.log(sc.lam), conf, sc.lam)
    center = worst_case_center(th, V, beta_T, sc.cost)
    rep = estimate_optimism(th, center, V, beta_T, sc.cost, sc.admissible,
                            sc.verify["optimism_samples"], rng, lam=sc.lam)
    return [
        CheckResult("optimism", "worst_case_center", rep.bound_respected,
                    detail=f"p_hat={rep.p_hat:.4f} (SE {rep.se_hat:.1e}) vs p_lower={rep.p_lower:.4f}"),
        CheckResult("optimism", "inclusion", rep.inclusion_violations == 0,
                    detail=f"{rep.inclusion_violations} samples with |theta'H*| <= rho* but J > J*; "
                           f"p_lin_hat={rep.p_lin_hat:.4f}"),
    ]


def check_cdf(sc: Scenario, rng):
    centers = np.linspace(-5, 5, 201)
    grid = np.logspace(-2, 1, 10)
    ok = all(gaussian_cdf_monotonicity_check(r, s, centers) for r in grid for s in grid)
    return [CheckResult("cdf", "monotone", ok, detail="10x10 log-spaced (rho, sigma) grid")]


POINCARE_WEIGHTS = {
    "uniform": lambda x: np.ones_like(x),
    "gauss": lambda x: np.exp(-x * x),
    "exp": lambda x: np.exp(-3 * x),
    "linear": lambda x: 1 + x,
    "gauss_shifted": lambda x: np.exp(-((x - 1.2) ** 2) / 0.3),
}


def check_poincare(sc: Scenario, rng):
    L = 2.0
    res = sc.verify["poincare_resolution"]
    violations, cases = 0, 0
    for name, w in POINCARE_WEIGHTS.items():
        for _ in range(sc.verify["poincare_cases"]):
            c = rng.standard_normal(4)
            f = np.polynomial.Polynomial(c)
            out = poincare_check_1d(f, w, L, res, fprime=f.deriv())
            violations += not out.holds
            cases += 1
    return [CheckResult("poincare", "random_cubics", violations == 0,
                        detail=f"{violations} violations in {cases} cases on [0, {L}]")]


def check_episodes(sc: Scenario, rng, traces=None):
    T, tau, traces = traces or _traces(sc, rng)
    p = sc.theta_star.n + sc.theta_star.d
    C = sc.admissible.C if sc.admissible.C is not None else 0.0
    bad = 0
    for tr in traces:
        c = episode_census(tr)
        gains = [float(np.linalg.norm(solve_riccati(LqParams.from_theta(t, tr.n), sc.cost).K, 2))
                 for t in tr.episode_thetas]
        Ceff = max([C] + gains)
        X = tr.max_state_norm
        bound_det = p * math.log2(1 + T * X * X * (1 + Ceff * Ceff) / sc.lam)
        bad += c.K_det > bound_det or c.K_len > math.ceil(T / tau)
    return [CheckResult("episodes", "counts", bad == 0,
                        detail=f"{bad} of {len(traces)} runs exceed the K_det or K_len bound (tau={tau})")]


def check_bounds(sc: Scenario, rng, traces=None):
    T, tau, traces = traces or _traces(sc, rng)
    conf_T = ConfidenceParams(sc.delta, sc.admissible.S, sc.theta_star.n, sc.theta_star.d, T,
                              sc.raw["learner"]["L"])
    rows = []
    failed, held = 0, 0
    for tr in traces:
        rep = theory_bound_report(tr, sc.theta_star, sc.cost, conf_T, sc.admissible, tau)
        failed += not rep.ok
        held += rep.events_held
    rows.append(CheckResult("bounds", "regret_terms", failed == 0,
                            detail=f"{failed} runs with a failed assertion; events held on {held}/{len(traces)}"))
    return rows


GROUPS = {
    "riccati": check_riccati,
    "cost_identity": check_cost_identity,
    "gradient": check_gradient,
    "gradient_inequality": check_gradient_inequality,
    "coverage": check_coverage,
    "self_normalized": check_self_normalized,
    "optimism": check_optimism,
    "cdf": check_cdf,
    "poincare": check_poincare,
    "episodes": check_episodes,
    "bounds": check_bounds,
}

TRACE_GROUPS = ("self_normalized", "episodes", "bounds")


def run_checks(sc: Scenario, groups, seed: int = 0, log=None) -> list[CheckResult]:
    """Run the selected groups with independent child RNG streams of ``seed``."""
    streams = np.random.SeedSequence(seed).spawn(len(GROUPS) + 1)
    rngs = {g: np.random.default_rng(s) for g, s in zip(GROUPS, streams)}
    traces = None
    results = []
    for g in groups:
        kwargs = {}
        try:
            if g in TRACE_GROUPS:
                if traces is None:
                    traces = _traces(sc, np.random.default_rng(streams[-1]))
                kwargs["traces"] = traces
            rows = GROUPS[g](sc, rngs[g], **kwargs)
        except TslqError as exc:
            rows = [CheckResult(g, "error", False, detail=f"{type(exc).__name__}: {exc}")]
        results.extend(rows)
        if log:
            for r in rows:
                log(r.line())
    return results
