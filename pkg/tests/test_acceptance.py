"""Acceptance criteria at full size. Each test prints one PASS/FAIL line.

Tolerances and sizes are pinned here. Criterion 10 is the slow scaling sweep
(a few minutes on one core).
"""

import math
import time

import numpy as np
import pytest
import yaml

from tslq import (
    AdmissibleSet,
    AgentFactory,
    ConfidenceParams,
    CostMatrices,
    LqParams,
    Unstabilizable,
    average_cost_1d,
    episode_census,
    grad_J,
    gradient_inequality_check,
    is_admissible,
    riccati_residual,
    rollout,
    solve_riccati,
    tau_cbrt,
)
from tslq.analysis import (
    estimate_optimism,
    fit_regret_exponent,
    poincare_check_1d,
    theory_bound_report,
    worst_case_center,
)
from tslq.cli import main as cli_main
from tslq.rls import beta_from_logdet, rls_coverage_experiment, self_normalized_sum

SEED = 20240601
REF_HORIZONS = (1000, 3000, 10_000, 30_000, 100_000)


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number:>2}: {detail}")
        return ok
    return emit


def random_stabilizable(rng, n, d, max_radius):
    """Generic ``(A, B)``: ``A`` rescaled to a random spectral radius, ``B`` Gaussian."""
    A = rng.standard_normal((n, n))
    A *= rng.uniform(0.05, max_radius) / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-12)
    return LqParams(A, rng.standard_normal((n, d)))


def identity_cost(theta):
    return CostMatrices(np.eye(theta.n), np.eye(theta.d))


def random_admissible(rng, count, S):
    out = []
    while len(out) < count:
        n, d = (int(v) for v in rng.integers(1, 4, 2))
        th = random_stabilizable(rng, n, d, 1.2)
        if is_admissible(th, identity_cost(th), S):
            out.append(th)
    return out


def central_difference(theta, cost, h=1e-6):
    base = theta.theta
    g = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        hi, lo = base.copy(), base.copy()
        hi[idx] += h
        lo[idx] -= h
        g[idx] = (solve_riccati(LqParams.from_theta(hi, theta.n), cost).J
                  - solve_riccati(LqParams.from_theta(lo, theta.n), cost).J) / (2 * h)
    return g


def ts_runs(ref, count, T, base_seed):
    theta, cost, S, env = ref
    f = AgentFactory("ts", cost, S)
    tau = tau_cbrt(T)
    return tau, [rollout(env, f(T, tau), T, seed=base_seed + i) for i in range(count)]


@pytest.fixture(scope="module")
def runs_T1e4(ref):
    t0 = time.perf_counter()
    tau, traces = ts_runs(ref, 50, 10_000, SEED)
    return tau, traces, time.perf_counter() - t0


def test_c01_riccati(verdict):
    rng = np.random.default_rng(SEED)
    t0 = time.perf_counter()
    worst_res, worst_rad = 0.0, 0.0
    for _ in range(500):
        n, d = (int(v) for v in rng.integers(1, 4, 2))
        th = random_stabilizable(rng, n, d, 1.5)
        cost = identity_cost(th)
        sol = solve_riccati(th, cost)
        worst_res = max(worst_res, riccati_residual(th, cost, sol))
        worst_rad = max(worst_rad, float(np.max(np.abs(np.linalg.eigvals(sol.A_c)))))
    unit = CostMatrices.scalar()
    zero = solve_riccati(LqParams.scalar(0.0, 1.0), unit)
    half = solve_riccati(LqParams.scalar(0.5, 1.0), unit)
    root = (0.25 + math.sqrt(0.0625 + 4)) / 2  # P^2 - 0.25 P - 1 = 0
    examples = (
        zero.P[0, 0] == pytest.approx(1.0, abs=1e-12) and zero.K[0, 0] == pytest.approx(0.0, abs=1e-12)
        and half.P[0, 0] == pytest.approx(root, abs=1e-10)
        and riccati_residual(LqParams.scalar(0.5, 1.0), unit, half) <= 1e-9
    )
    try:
        solve_riccati(LqParams.scalar(1.2, 0.0), unit)
        examples = False
    except Unstabilizable:
        pass
    elapsed = time.perf_counter() - t0
    ok = worst_res <= 1e-9 and worst_rad < 1 and examples and elapsed < 10
    assert verdict(1, ok, f"500 random cases: max residual {worst_res:.2e}, max spectral radius "
                          f"{worst_rad:.4f}; worked examples {'ok' if examples else 'wrong'}; {elapsed:.1f}s")


def test_c02_cost_identity(ref, verdict):
    theta, cost, S, env = ref
    t0 = time.perf_counter()
    axis = np.linspace(-S.S, S.S, 100)
    worst, count = 0.0, 0
    for a in axis:
        for b in axis:
            th = LqParams.scalar(a, b)
            if not is_admissible(th, cost, S):
                continue
            J = solve_riccati(th, cost).J
            worst = max(worst, abs(average_cost_1d(th, cost) - J) / (1 + J))
            count += 1
    elapsed = time.perf_counter() - t0
    ok = count > 0 and worst <= 1e-8 and elapsed < 10
    assert verdict(2, ok, f"{count} admissible grid points: max |J_closed - Tr P|/(1+J) = {worst:.2e}; "
                          f"{elapsed:.1f}s")


def test_c03_gradient(verdict):
    rng = np.random.default_rng(SEED + 3)
    t0 = time.perf_counter()
    worst = 0.0
    for th in random_admissible(rng, 100, AdmissibleSet(100.0, 30.0)):
        cost = identity_cost(th)
        g, fd = grad_J(th, cost), central_difference(th, cost)
        worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(fd)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-5 and elapsed < 30
    assert verdict(3, ok, f"100 admissible cases: max relative error {worst:.2e}; {elapsed:.1f}s")


def test_c04_gradient_inequality(verdict):
    rng = np.random.default_rng(SEED + 4)
    failures = 0
    for th in random_admissible(rng, 100, AdmissibleSet(100.0, 30.0)):
        p = th.n + th.d
        M = rng.standard_normal((p, p))
        V = M @ M.T + rng.uniform(0.01, 1.0) * np.eye(p)
        failures += not gradient_inequality_check(th, identity_cost(th), V, slack=1e-8)
    assert verdict(4, failures == 0, f"{failures} violations over 100 (theta, V) pairs")


def test_c05_rls_coverage(ref, verdict):
    theta, cost, S, env = ref
    t0 = time.perf_counter()
    conf = ConfidenceParams(0.1, S.S, T=1000)
    cov = rls_coverage_experiment(theta, solve_riccati(theta, cost).K, 1000, 500, conf, seed=SEED)
    elapsed = time.perf_counter() - t0
    ok = cov >= 0.9 and elapsed < 120
    assert verdict(5, ok, f"simultaneous coverage {cov:.3f} over 500 runs (need >= 0.9); {elapsed:.1f}s")


def test_c06_self_normalized(ref, verdict):
    _, traces = ts_runs(ref, 100, 2000, SEED + 6)
    violations = 0
    for tr in traces:
        sums, bounds = self_normalized_sum(tr.z, 1.0, prefixes=True)
        violations += int(np.sum(sums > bounds))
    assert verdict(6, violations == 0, f"{violations} violating prefixes across 100 traces of length 2000")


def test_c07_optimism(ref, verdict):
    theta, cost, S, env = ref
    t0 = time.perf_counter()
    T = 1000
    tr = rollout(env, AgentFactory("ts", cost, S)(T, 10), T, seed=SEED + 7)
    V = np.eye(2) + tr.z.T @ tr.z
    conf = ConfidenceParams(0.05, S.S, T=T)
    b = beta_from_logdet(np.linalg.slogdet(V)[1], 0.0, conf, 1.0)
    center = worst_case_center(theta, V, b, cost)
    rep = estimate_optimism(theta, center, V, b, cost, S, 100_000, np.random.default_rng(SEED), slack=1e-9)
    elapsed = time.perf_counter() - t0
    ok = rep.p_hat >= rep.p_lower - 3 * rep.se_hat and rep.inclusion_violations == 0 and elapsed < 120
    assert verdict(7, ok, f"p_hat {rep.p_hat:.4f} (SE {rep.se_hat:.1e}) vs p_lower {rep.p_lower:.4f}; "
                          f"{rep.inclusion_violations} inclusion violations; {elapsed:.1f}s")


def test_c08_episode_bounds(ref, runs_T1e4, verdict):
    theta, cost, S, env = ref
    tau, traces, _ = runs_T1e4
    T = 10_000
    bad = 0
    for tr in traces:
        c = episode_census(tr)
        gains = [abs(solve_riccati(LqParams.from_theta(t, 1), cost).K[0, 0]) for t in tr.episode_thetas]
        C = max([S.C] + gains)
        X = tr.max_state_norm
        bad += c.K_det > 2 * math.log2(1 + T * X * X * (1 + C * C)) or c.K_len > math.ceil(T / tau)
    ok = tau == 22 and bad == 0
    assert verdict(8, ok, f"tau={tau}; {bad} of 50 runs exceed the K_det or K_len bound")


def test_c09_theory_bounds(ref, runs_T1e4, verdict):
    theta, cost, S, env = ref
    tau, traces, _ = runs_T1e4
    conf = ConfidenceParams(0.05, S.S, T=10_000)
    held, bad = 0, []
    for i, tr in enumerate(traces):
        rep = theory_bound_report(tr, theta, cost, conf, S, tau)
        if not rep.rls_event:
            continue
        held += 1
        for name in ("R_RLS_1", "sum_norm_z"):
            if not rep[name].holds:
                bad.append(f"run {i} {name}")
    ok = held > 0 and not bad
    assert verdict(9, ok, f"confidence event held on {held}/50 runs; violations: {bad or 'none'}")


@pytest.mark.slow
def test_c10_regret_scaling(ref, verdict):
    theta, cost, S, env = ref
    t0 = time.perf_counter()
    fit = fit_regret_exponent(env, AgentFactory("ts", cost, S), REF_HORIZONS, replications=20)
    elapsed = time.perf_counter() - t0
    trend = fit.ratio_trend
    ok = (0.4 <= fit.slope <= 0.8 and fit.slope_ci[1] < 1.0 and trend <= 2.0
          and min(fit.n_ok) >= 20 and elapsed < 1800)
    ratios = ", ".join(f"{r:.2f}" for r in fit.ratio_T23)
    assert verdict(10, ok, f"slope {fit.slope:.3f} (95% CI {fit.slope_ci[0]:.3f}..{fit.slope_ci[1]:.3f}, "
                           f"band [0.4, 0.8]); R/T^(2/3) = [{ratios}], last/first {trend:.2f}; "
                           f"{elapsed:.0f}s")


POINCARE_WEIGHTS = {
    "uniform": lambda x: np.ones_like(x),
    "gaussian": lambda x: np.exp(-x * x),
    "exponential": lambda x: np.exp(-3 * x),
    "linear": lambda x: 1 + x,
    "narrow_gaussian": lambda x: np.exp(-((x - 1.2) ** 2) / 0.3),
}


def random_test_function(rng, L):
    kind = rng.integers(3)
    if kind == 0:
        f = np.polynomial.Polynomial(rng.standard_normal(4))
        return f, f.deriv()
    if kind == 1:
        k, phase = rng.uniform(0.5, 8), rng.uniform(0, 2 * np.pi)
        return (lambda x: np.sin(k * x + phase)), (lambda x: k * np.cos(k * x + phase))
    c, s = rng.uniform(0, L), rng.standard_normal()
    return (lambda x: np.abs(x - c) + s * x), (lambda x: np.sign(x - c) + s)


def test_c11_poincare(verdict):
    rng = np.random.default_rng(SEED + 11)
    L = 2.0
    funcs = [random_test_function(rng, L) for _ in range(200)]
    violations = 0
    for w in POINCARE_WEIGHTS.values():
        for f, df in funcs:
            violations += not poincare_check_1d(f, w, L, resolution=10_001, fprime=df).holds
    assert verdict(11, violations == 0,
                   f"{violations} violations: 200 functions x 5 weights at 10^4 intervals")


def test_c12_determinism(tmp_path, verdict):
    cfg = {"system": {"A": 0.9, "B": 0.5},
           "run": {"T": 2000, "replications": 4, "seed": SEED}}
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(cfg))
    outputs = {}
    for label, jobs in (("first", 1), ("second", 1), ("jobs4", 4)):
        out = tmp_path / label
        assert cli_main(["run", "--config", str(path), "--out", str(out), "--jobs", str(jobs), "-q"]) == 0
        outputs[label] = {p.name: p.read_bytes() for p in sorted(out.glob("trace_*.csv"))}
    ok = len(outputs["first"]) == 4 and outputs["first"] == outputs["second"] == outputs["jobs4"]
    assert verdict(12, ok, "4 trace CSVs byte-identical across two runs and jobs in {1, 4}"
                   if ok else "trace CSVs differ")
