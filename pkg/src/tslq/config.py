"""Experiment configuration: YAML schema, validation and scenario assembly.

Schema (every key optional except ``system.A`` and ``system.B``)::

    system:     {A, B, Q, R, noise_std}      # numbers or nested lists
    learner:    {algorithm, lambda, delta, L, tau, tau_rule, grid_step}
    admissible: {D, D_auto_margin, D_auto_halfwidth, S2}
    run:        {T, horizons, replications, seed, out, jobs, save_traces}
    guards:     {max_rejection_attempts, blowup}
    verify:     {checks, ...sizes}

Unknown keys are rejected. A run manifest is itself a valid config.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np
import yaml

from .agents import ALGORITHMS, AgentFactory, tau_cbrt
from .env import Environment
from .errors import ConfigInvalid, TslqError
from .lq import AdmissibleSet, CostMatrices, LqParams, admissible_set_constants, is_admissible, solve_riccati

VERIFY_GROUPS = (
    "riccati", "cost_identity", "gradient", "gradient_inequality", "coverage",
    "self_normalized", "optimism", "cdf", "poincare", "episodes", "bounds",
)

DEFAULTS = {
    "system": {"Q": 1.0, "R": 1.0, "noise_std": None},
    "learner": {"algorithm": "ts", "lambda": 1.0, "delta": 0.05, "L": 1.0,
                "tau": None, "tau_rule": "cbrt", "grid_step": 0.01},
    "admissible": {"D": "auto", "D_auto_margin": 2.0, "D_auto_halfwidth": 0.1, "S2": 4.0},
    "run": {"T": 1000, "horizons": None, "replications": 1, "seed": 0, "out": "results",
            "jobs": 1, "save_traces": True},
    "guards": {"max_rejection_attempts": 100_000, "blowup": 1e8},
    "verify": {"checks": list(VERIFY_GROUPS), "random_cases": 100, "coverage_T": 1000,
               "coverage_replications": 200, "optimism_samples": 100_000, "trace_runs": 10,
               "trace_T": 2000, "poincare_cases": 50, "poincare_resolution": 10_001},
}

REQUIRED = {("system", "A"), ("system", "B")}


def _matrix(value, name: str) -> np.ndarray:
    try:
        M = np.atleast_2d(np.asarray(value, dtype=float))
    except (TypeError, ValueError):
        raise ConfigInvalid(f"{name}: expected a number or a nested list of numbers") from None
    if M.ndim != 2 or not np.all(np.isfinite(M)):
        raise ConfigInvalid(f"{name}: expected a finite matrix")
    return M


def _number(cfg, section, key, lo=None, hi=None, integer=False, open_lo=False, open_hi=False):
    v = cfg[section][key]
    name = f"{section}.{key}"
    if isinstance(v, str):  # YAML 1.1 reads "1e8" as a string
        try:
            v = float(v)
        except ValueError:
            pass
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigInvalid(f"{name}: expected a number, got {v!r}")
    if integer and (not float(v).is_integer()):
        raise ConfigInvalid(f"{name}: expected an integer, got {v!r}")
    if not math.isfinite(v):
        raise ConfigInvalid(f"{name}: must be finite")
    if lo is not None and (v < lo or (open_lo and v == lo)):
        raise ConfigInvalid(f"{name}: must be {'>' if open_lo else '>='} {lo}, got {v}")
    if hi is not None and (v > hi or (open_hi and v == hi)):
        raise ConfigInvalid(f"{name}: must be {'<' if open_hi else '<='} {hi}, got {v}")
    return int(v) if integer else float(v)


def _merge(raw: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigInvalid("config must be a mapping of sections")
    cfg = copy.deepcopy(DEFAULTS)
    cfg["system"].update({"A": None, "B": None})
    for section, body in raw.items():
        if section not in cfg:
            raise ConfigInvalid(f"unknown section {section!r}")
        if body is None:
            continue
        if not isinstance(body, dict):
            raise ConfigInvalid(f"section {section!r} must be a mapping")
        for key, value in body.items():
            if key not in cfg[section]:
                raise ConfigInvalid(f"unknown key {section}.{key}")
            cfg[section][key] = value
    for section, key in REQUIRED:
        if cfg[section][key] is None:
            raise ConfigInvalid(f"missing required key {section}.{key}")
    return cfg


def default_D(theta_star: LqParams, cost: CostMatrices, margin: float, halfwidth: float) -> float:
    """``margin`` times the largest ``Tr P`` over the corners of the box ``theta_* +- halfwidth``."""
    th = theta_star.theta
    worst = 0.0
    for signs in product((-1.0, 1.0), repeat=th.size):
        corner = th + halfwidth * np.asarray(signs).reshape(th.shape)
        try:
            worst = max(worst, solve_riccati(LqParams.from_theta(corner, theta_star.n), cost).J)
        except TslqError:
            raise ConfigInvalid(
                f"admissible.D=auto: corner {corner.ravel().tolist()} is not stabilizable; set D explicitly"
            ) from None
    return margin * worst


@dataclass(frozen=True)
class Scenario:
    """Validated configuration with the derived objects built from it."""

    raw: dict
    env: Environment
    admissible: AdmissibleSet
    factory: AgentFactory

    @property
    def theta_star(self) -> LqParams:
        return self.env.theta_star

    @property
    def cost(self) -> CostMatrices:
        return self.env.cost

    @property
    def run(self) -> dict:
        return self.raw["run"]

    @property
    def verify(self) -> dict:
        return self.raw["verify"]

    @property
    def lam(self) -> float:
        return self.raw["learner"]["lambda"]

    @property
    def delta(self) -> float:
        return self.raw["learner"]["delta"]

    def tau(self, T: int) -> int:
        learner = self.raw["learner"]
        if learner["tau"] is not None:
            return learner["tau"]
        return T if learner["tau_rule"] == "T" else tau_cbrt(T)

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.raw).encode()).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def build_scenario(raw: dict) -> Scenario:
    """Validate a parsed config and assemble the environment, admissible set and agent recipe."""
    cfg = _merge(raw)
    sysc, learner, adm, run, guards, ver = (cfg[k] for k in
                                            ("system", "learner", "admissible", "run", "guards", "verify"))
    A, B = _matrix(sysc["A"], "system.A"), _matrix(sysc["B"], "system.B")
    n = A.shape[0]
    if A.shape != (n, n):
        raise ConfigInvalid(f"system.A must be square, got shape {A.shape}")
    if B.shape[0] != n:
        raise ConfigInvalid(f"system.B must have {n} rows, got shape {B.shape}")
    d = B.shape[1]
    try:
        theta_star = LqParams(A, B)
    except (TslqError, ValueError) as exc:
        raise ConfigInvalid(f"system: {exc}") from None
    Q, R = _matrix(sysc["Q"], "system.Q"), _matrix(sysc["R"], "system.R")
    if Q.shape != (n, n):
        raise ConfigInvalid(f"system.Q must be {n}x{n}, got shape {Q.shape}")
    if R.shape != (d, d):
        raise ConfigInvalid(f"system.R must be {d}x{d}, got shape {R.shape}")
    for name, M in (("system.Q", Q), ("system.R", R)):
        if np.max(np.abs(M - M.T)) > 1e-12 or np.linalg.eigvalsh(M)[0] <= 0:
            raise ConfigInvalid(f"{name} must be symmetric positive definite")
    cost = CostMatrices(Q, R)
    noise = None if sysc["noise_std"] is None else _matrix(sysc["noise_std"], "system.noise_std")
    if noise is not None and noise.shape != (n, n):
        raise ConfigInvalid(f"system.noise_std must be {n}x{n}")
    try:
        env = Environment(theta_star, cost, noise)
    except TslqError as exc:
        raise ConfigInvalid(f"system: theta_star is not stabilizable ({exc})") from None

    if learner["algorithm"] not in ALGORITHMS:
        raise ConfigInvalid(f"learner.algorithm must be one of {ALGORITHMS}, got {learner['algorithm']!r}")
    learner["lambda"] = _number(cfg, "learner", "lambda", 0, open_lo=True)
    learner["delta"] = _number(cfg, "learner", "delta", 0, 1, open_lo=True, open_hi=True)
    learner["L"] = _number(cfg, "learner", "L", 0, open_lo=True)
    learner["grid_step"] = _number(cfg, "learner", "grid_step", 0, open_lo=True)
    if learner["tau"] is not None:
        learner["tau"] = _number(cfg, "learner", "tau", 1, integer=True)
    if learner["tau_rule"] not in ("cbrt", "T"):
        raise ConfigInvalid(f"learner.tau_rule must be 'cbrt' or 'T', got {learner['tau_rule']!r}")
    if learner["algorithm"] in ("ce", "ofu1d") and (n, d) != (1, 1):
        raise ConfigInvalid(f"learner.algorithm={learner['algorithm']} requires a scalar system")

    adm["S2"] = _number(cfg, "admissible", "S2", 0, open_lo=True)
    adm["D_auto_margin"] = _number(cfg, "admissible", "D_auto_margin", 1)
    adm["D_auto_halfwidth"] = _number(cfg, "admissible", "D_auto_halfwidth", 0)
    if adm["D"] == "auto":
        adm["D"] = default_D(theta_star, cost, adm["D_auto_margin"], adm["D_auto_halfwidth"])
    adm["D"] = _number(cfg, "admissible", "D", 0, open_lo=True)
    admissible = AdmissibleSet(adm["D"], adm["S2"])
    if not is_admissible(theta_star, cost, admissible):
        raise ConfigInvalid("admissible: theta_star lies outside the admissible set (raise D or S2)")
    if (n, d) == (1, 1):
        rho, C = admissible_set_constants(admissible, cost, step=learner["grid_step"])
        admissible = admissible.with_constants(rho, C)

    run["T"] = _number(cfg, "run", "T", 1, integer=True)
    run["replications"] = _number(cfg, "run", "replications", 1, integer=True)
    run["seed"] = _number(cfg, "run", "seed", 0, integer=True)
    run["jobs"] = _number(cfg, "run", "jobs", 1, integer=True)
    if not isinstance(run["out"], str):
        raise ConfigInvalid("run.out must be a path string")
    if not isinstance(run["save_traces"], bool):
        raise ConfigInvalid("run.save_traces must be true or false")
    if run["horizons"] is not None:
        hs = run["horizons"]
        if not isinstance(hs, list) or len(hs) < 3 or not all(
            isinstance(h, int) and not isinstance(h, bool) and h >= 1 for h in hs
        ):
            raise ConfigInvalid("run.horizons must be a list of at least 3 positive integers")
        if any(b <= a for a, b in zip(hs, hs[1:])):
            raise ConfigInvalid("run.horizons must be strictly increasing")
        if math.log10(hs[-1] / hs[0]) < 1.5:
            raise ConfigInvalid("run.horizons must span at least 1.5 decades")

    guards["max_rejection_attempts"] = _number(cfg, "guards", "max_rejection_attempts", 1, integer=True)
    guards["blowup"] = _number(cfg, "guards", "blowup", 0, open_lo=True)

    ver["checks"] = parse_checks(ver["checks"])
    for key in DEFAULTS["verify"]:
        if key != "checks":
            ver[key] = _number(cfg, "verify", key, 1, integer=True)

    sysc.update(A=A.tolist(), B=B.tolist(), Q=Q.tolist(), R=R.tolist(),
                noise_std=None if noise is None else noise.tolist())
    factory = AgentFactory(
        learner["algorithm"], cost, admissible, learner["lambda"], learner["delta"], learner["L"],
        theta_star, guards["max_rejection_attempts"], learner["grid_step"],
    )
    return Scenario(cfg, env, admissible, factory)


def parse_checks(value) -> list[str]:
    if isinstance(value, str):
        value = [v.strip() for v in value.split(",") if v.strip()]
    if not isinstance(value, list) or not value:
        raise ConfigInvalid("verify.checks must be a non-empty list of check groups")
    bad = [v for v in value if v not in VERIFY_GROUPS]
    if bad:
        raise ConfigInvalid(f"unknown check group(s) {bad}; choose from {list(VERIFY_GROUPS)}")
    return list(value)


def load_raw(path) -> dict:
    """Parse a YAML config (or a run manifest) without validating it."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"config {path} is not valid YAML: {exc}") from None
    raw = {} if raw is None else raw
    if isinstance(raw, dict) and "config" in raw and "command" in raw:
        raw = raw["config"]
    return raw


def load_config(path) -> Scenario:
    return build_scenario(load_raw(path))
