"""Regularized least-squares estimation of ``theta_*`` and its confidence radii."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, LambdaTooSmall
from .lq import LqParams


@dataclass(frozen=True)
class ConfidenceParams:
    """Confidence level and constants entering ``beta_t`` and ``gamma_t``.

    ``S`` is the Frobenius radius of the admissible set, ``L`` the
    sub-Gaussian parameter of the noise and ``T`` the horizon.
    """

    delta: float
    S: float
    n: int = 1
    d: int = 1
    T: int = 1
    L: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")

    @property
    def delta_prime(self) -> float:
        return self.delta / (8.0 * self.T)


class RlsState:
    """Design matrix ``V = lam I + sum z z'`` and the ridge estimate ``V^{-1} sum z x_next'``.

    :meth:`update` mutates in place; :func:`rls_update` returns a new state.
    """

    def __init__(self, n: int, d: int, lam: float = 1.0):
        if not lam > 0:
            raise ValueError(f"lambda must be positive, got {lam}")
        p = n + d
        self.n, self.d, self.lam = n, d, float(lam)
        self.V = self.lam * np.eye(p)
        self.cross_sum = np.zeros((p, n))
        self.theta_hat = np.zeros((p, n))
        self.t = 0
        self.log_det_V0 = p * math.log(self.lam)

    def copy(self) -> "RlsState":
        new = RlsState.__new__(RlsState)
        new.__dict__.update(self.__dict__)
        new.V = self.V.copy()
        new.cross_sum = self.cross_sum.copy()
        new.theta_hat = self.theta_hat.copy()
        return new

    def update(self, z, x_next) -> "RlsState":
        z = np.asarray(z, dtype=float).ravel()
        x_next = np.asarray(x_next, dtype=float).ravel()
        if z.size != self.n + self.d or x_next.size != self.n:
            raise DimensionMismatch(
                f"expected z of size {self.n + self.d} and x_next of size {self.n}"
            )
        self.V += np.outer(z, z)
        self.cross_sum += np.outer(z, x_next)
        self.theta_hat = np.linalg.solve(self.V, self.cross_sum)
        self.t += 1
        return self

    def log_det(self) -> float:
        cached = self.__dict__.get("_log_det")
        if cached is not None and cached[0] == self.t:
            return cached[1]
        value = float(np.sum(np.log(np.linalg.eigvalsh(self.V))))
        self._log_det = (self.t, value)
        return value

    def inv_sqrt(self) -> np.ndarray:
        """``W = V^{-1/2}`` from the symmetric eigendecomposition."""
        w, U = np.linalg.eigh(self.V)
        return (U / np.sqrt(w)) @ U.T

    def norm_inv(self, z) -> float:
        """``|z|_{V^{-1}}``."""
        z = np.asarray(z, dtype=float).ravel()
        return math.sqrt(float(z @ np.linalg.solve(self.V, z)))

    def weighted_error(self, theta) -> float:
        """``sqrt(Tr((theta_hat - theta)' V (theta_hat - theta)))``."""
        if isinstance(theta, LqParams):
            theta = theta.theta
        E = self.theta_hat - np.asarray(theta, dtype=float).reshape(self.theta_hat.shape)
        return math.sqrt(max(float(np.sum(E * (self.V @ E))), 0.0))


def rls_update(state: RlsState, z, x_next) -> RlsState:
    return state.copy().update(z, x_next)


def beta_from_logdet(log_det_V: float, log_det_V0: float, conf: ConfidenceParams, lam: float) -> float:
    ratio = max(log_det_V - log_det_V0, 0.0)
    # 2 log(det(V)^{1/2} / det(lam I)^{1/2}) = log det V - log det(lam I)
    return conf.n * conf.L * math.sqrt(ratio) + math.sqrt(lam) * conf.S


def beta(state: RlsState, conf: ConfidenceParams) -> float:
    """``n L sqrt(2 log(det(V)^{1/2} / det(lam I)^{1/2})) + sqrt(lam) S``."""
    return beta_from_logdet(state.log_det(), state.log_det_V0, conf, state.lam)


def gamma_factor_raw(n: int, d: int, delta_prime: float) -> float:
    """``n sqrt(2 (n+d) log(2 n (n+d) / delta'))``."""
    p = n + d
    return n * math.sqrt(2.0 * p * math.log(2.0 * n * p / delta_prime))


def gamma_factor(conf: ConfidenceParams) -> float:
    return gamma_factor_raw(conf.n, conf.d, conf.delta_prime)


def gamma(state: RlsState, conf: ConfidenceParams) -> float:
    """TS ellipsoid radius ``beta * n * sqrt(2 (n+d) log(2 n (n+d) / delta'))``."""
    return beta(state, conf) * gamma_factor(conf)


def self_normalized_sum(zs, lam: float, prefixes: bool = False):
    """Both sides of ``sum_s min(|z_s|^2_{V_s^{-1}}, 1) <= 2 log(det V_{t+1} / det(lam I))``.

    Returns ``(sum_min, bound)`` for the full sequence, or arrays over every
    prefix when ``prefixes`` is true.
    """
    if lam < 1:
        raise LambdaTooSmall(f"the bound requires lambda >= 1, got {lam}")
    zs = np.asarray(zs, dtype=float)
    if zs.size == 0:
        return (np.zeros(0), np.zeros(0)) if prefixes else (0.0, 0.0)
    zs = zs.reshape(len(zs), -1)
    p = zs.shape[1]
    V = lam * np.eye(p)
    logdet0 = p * math.log(lam)
    sums = np.empty(len(zs))
    bounds = np.empty(len(zs))
    acc = 0.0
    for s, z in enumerate(zs):
        acc += min(float(z @ np.linalg.solve(V, z)), 1.0)
        V += np.outer(z, z)
        sums[s] = acc
        bounds[s] = 2.0 * (np.linalg.slogdet(V)[1] - logdet0)
    if prefixes:
        return sums, bounds
    return float(sums[-1]), float(bounds[-1])


def rls_coverage_experiment(
    true_theta: LqParams,
    gain,
    T: int,
    replications: int,
    conf: ConfidenceParams,
    lam: float = 1.0,
    noise_scale: float = 1.0,
    seed: int = 0,
) -> float:
    """Fraction of runs where ``|theta_hat_t - theta_*|_{V_t} <= beta_t`` for all ``t <= T``.

    Each replication drives the true system from ``x_0 = 0`` with the static
    policy ``u = gain @ x`` and Gaussian noise of scale ``noise_scale``. The
    replications are simulated together as one batch.
    """
    theta = true_theta.theta
    n, d = true_theta.n, true_theta.d
    p = n + d
    K = np.atleast_2d(np.asarray(gain, dtype=float)).reshape(d, n)
    rng = np.random.default_rng(seed)
    m = replications
    V = np.broadcast_to(lam * np.eye(p), (m, p, p)).copy()
    cross = np.zeros((m, p, n))
    x = np.zeros((m, n))
    logdet0 = p * math.log(lam)
    ok = np.ones(m, dtype=bool)

    def check(theta_hat):
        E = theta_hat - theta
        err2 = np.einsum("mij,mik,mkj->m", E, V, E)
        ld = np.linalg.slogdet(V)[1]
        b = conf.n * conf.L * np.sqrt(np.maximum(ld - logdet0, 0.0)) + math.sqrt(lam) * conf.S
        return err2 <= b * b

    ok &= check(np.zeros((m, p, n)))
    for _ in range(T):
        z = np.concatenate([x, x @ K.T], axis=1)
        x_next = z @ theta + noise_scale * rng.standard_normal((m, n))
        V += z[:, :, None] * z[:, None, :]
        cross += z[:, :, None] * x_next[:, None, :]
        ok &= check(np.linalg.solve(V, cross))
        x = x_next
    return float(np.mean(ok))
