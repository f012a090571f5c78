"""Exact discrete-time LQ control: Riccati fixed point, gains, average cost,
admissibility and the gradient of the optimal average cost.

Parameters follow the stacked convention ``theta.T = (A, B)``, so that
``theta`` has shape ``(n + d, n)`` and the next expected state is
``theta.T @ z`` with ``z = (x, u)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyAdmissibleSet,
    NotOneDimensional,
    NotPositiveDefinite,
    Unstabilizable,
)

RICCATI_TOL = 1e-12
RICCATI_MAX_ITER = 10**6
RICCATI_DIVERGENCE = 1e12


@dataclass(frozen=True)
class LqParams:
    """System matrices ``A`` (n x n) and ``B`` (n x d)."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"A must be square, got shape {A.shape}")
        if B.ndim != 2 or B.shape[0] != A.shape[0]:
            raise DimensionMismatch(f"B must have {A.shape[0]} rows, got shape {B.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise ValueError("system matrices must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @classmethod
    def from_theta(cls, theta, n: int) -> "LqParams":
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 1:
            theta = theta.reshape(-1, n)
        if theta.shape[1] != n or theta.shape[0] <= n:
            raise DimensionMismatch(f"theta of shape {theta.shape} incompatible with n={n}")
        return cls(theta[:n].T, theta[n:].T)

    @classmethod
    def scalar(cls, a: float, b: float) -> "LqParams":
        return cls([[a]], [[b]])

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.B.shape[1]

    @property
    def theta(self) -> np.ndarray:
        return np.vstack([self.A.T, self.B.T])


@dataclass(frozen=True)
class CostMatrices:
    """Symmetric positive-definite state cost ``Q`` and control cost ``R``."""

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        for name, M in (("Q", Q), ("R", R)):
            if M.ndim != 2 or M.shape[0] != M.shape[1]:
                raise DimensionMismatch(f"{name} must be square, got shape {M.shape}")
            if not np.all(np.isfinite(M)):
                raise NotPositiveDefinite(f"{name} has non-finite entries")
            if np.max(np.abs(M - M.T)) > 1e-12:
                raise NotPositiveDefinite(f"{name} is not symmetric")
            if np.linalg.eigvalsh(M)[0] <= 0:
                raise NotPositiveDefinite(f"{name} is not positive definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    @classmethod
    def scalar(cls, q: float = 1.0, r: float = 1.0) -> "CostMatrices":
        return cls([[q]], [[r]])


@dataclass(frozen=True)
class RiccatiSolution:
    P: np.ndarray
    K: np.ndarray
    J: float
    A_c: np.ndarray
    H: np.ndarray
    iterations: int = 0


@dataclass(frozen=True)
class AdmissibleSet:
    """``{theta : Tr P(theta) <= D, Tr(theta theta^T) <= S2}``.

    ``rho`` and ``C`` are filled in by :func:`admissible_set_constants`.
    """

    D: float
    S2: float
    rho: float | None = None
    C: float | None = None

    def __post_init__(self):
        if not (self.D > 0 and self.S2 > 0):
            raise ValueError(f"D and S2 must be positive (got D={self.D}, S2={self.S2})")

    @property
    def S(self) -> float:
        return math.sqrt(self.S2)

    def with_constants(self, rho: float, C: float) -> "AdmissibleSet":
        return AdmissibleSet(self.D, self.S2, rho, C)


def _check_dims(theta: LqParams, cost: CostMatrices):
    if cost.Q.shape[0] != theta.n or cost.R.shape[0] != theta.d:
        raise DimensionMismatch(
            f"Q is {cost.Q.shape}, R is {cost.R.shape} for n={theta.n}, d={theta.d}"
        )


def _scalar_fixed_point(a, b, q, r, tol, max_iter, divergence, trace_cap):
    # Returns (p, iterations) or (None, iterations) if trace_cap was exceeded.
    p = q
    a2 = a * a
    for k in range(1, max_iter + 1):
        bp = b * p
        p_new = q + a2 * p - (a * bp) ** 2 / (r + b * bp)
        if trace_cap is not None and p_new > trace_cap:
            return None, k
        if not p_new <= divergence:
            raise Unstabilizable(f"Riccati iterates diverged (P > {divergence:g})")
        if abs(p_new - p) <= tol * max(1.0, p_new):
            return p_new, k
        p = p_new
    raise Unstabilizable(f"Riccati iteration did not converge in {max_iter} steps")


def _matrix_fixed_point(A, B, Q, R, tol, max_iter, divergence, trace_cap):
    P = Q.copy()
    AT = A.T
    for k in range(1, max_iter + 1):
        PA = P @ A
        PB = P @ B
        G = np.linalg.solve(R + B.T @ PB, PB.T @ A)
        P_new = Q + AT @ PA - (AT @ PB) @ G
        P_new = 0.5 * (P_new + P_new.T)
        tr = np.trace(P_new)
        if trace_cap is not None and tr > trace_cap:
            return None, k
        if not tr <= divergence:
            raise Unstabilizable(f"Riccati iterates diverged (Tr P > {divergence:g})")
        scale = max(1.0, float(np.max(np.abs(P_new))))
        if np.max(np.abs(P_new - P)) <= tol * scale:
            return P_new, k
        P = P_new
    raise Unstabilizable(f"Riccati iteration did not converge in {max_iter} steps")


def _riccati_P(theta, cost, tol, max_iter, divergence, trace_cap=None):
    _check_dims(theta, cost)
    if theta.n == 1 and theta.d == 1:
        p, k = _scalar_fixed_point(
            float(theta.A[0, 0]), float(theta.B[0, 0]),
            float(cost.Q[0, 0]), float(cost.R[0, 0]),
            tol, max_iter, divergence, trace_cap,
        )
        return (None if p is None else np.array([[p]])), k
    return _matrix_fixed_point(
        theta.A, theta.B, cost.Q, cost.R, tol, max_iter, divergence, trace_cap
    )


def _assemble(theta, cost, P, iterations):
    A, B = theta.A, theta.B
    K = -np.linalg.solve(cost.R + B.T @ P @ B, B.T @ P @ A)
    A_c = A + B @ K
    if np.max(np.abs(np.linalg.eigvals(A_c))) >= 1.0:
        raise Unstabilizable("Riccati fixed point does not stabilize the closed loop")
    H = np.vstack([np.eye(theta.n), K])
    return RiccatiSolution(P=P, K=K, J=float(np.trace(P)), A_c=A_c, H=H, iterations=iterations)


def solve_riccati(
    theta: LqParams,
    cost: CostMatrices,
    tol: float = RICCATI_TOL,
    max_iter: int = RICCATI_MAX_ITER,
    divergence: float = RICCATI_DIVERGENCE,
) -> RiccatiSolution:
    """Solve ``P = Q + A'PA + A'PB K`` by fixed-point iteration from ``P0 = Q``.

    Convergence is declared when the largest entry change drops below
    ``tol * max(1, max|P|)``. Raises :class:`Unstabilizable` when the trace
    exceeds ``divergence`` or ``max_iter`` is reached.
    """
    P, k = _riccati_P(theta, cost, tol, max_iter, divergence)
    return _assemble(theta, cost, P, k)


def riccati_residual(theta: LqParams, cost: CostMatrices, sol: RiccatiSolution) -> float:
    """Max-abs residual of ``P - (Q + A'PA + A'PBK)``."""
    A, B, P = theta.A, theta.B, sol.P
    res = P - (cost.Q + A.T @ P @ A + A.T @ P @ B @ sol.K)
    return float(np.max(np.abs(res)))


def average_cost_1d(theta: LqParams, cost: CostMatrices) -> float:
    """Stationary average cost of the 1-D optimal controller in closed form.

    ``J = (Q + K^2 R) / (1 - (A + B K)^2)``: the per-step cost weight times
    the stationary variance of the closed-loop AR(1) state.
    """
    if theta.n != 1 or theta.d != 1:
        raise NotOneDimensional("average_cost_1d requires n = d = 1")
    sol = solve_riccati(theta, cost)
    k = float(sol.K[0, 0])
    ac = float(sol.A_c[0, 0])
    return (float(cost.Q[0, 0]) + k * k * float(cost.R[0, 0])) / (1.0 - ac * ac)


def _lyapunov_operator(A_c: np.ndarray) -> np.ndarray:
    n = A_c.shape[0]
    # Row-major vec: vec(M X N) = kron(M, N.T) vec(X)
    return np.eye(n * n) - np.kron(A_c.T, A_c.T)


def grad_J(theta: LqParams, cost: CostMatrices, sol: RiccatiSolution | None = None) -> np.ndarray:
    """Gradient of ``J(theta) = Tr P(theta)`` with respect to ``theta``.

    For each basis direction ``E`` of ``R^{(n+d) x n}`` the directional
    derivative ``dP`` solves the Lyapunov equation
    ``dP = A_c' dP A_c + C + C'`` with ``C = A_c' P E' H``; the gradient entry
    is ``Tr(dP)``. All directions share one factorisation.
    """
    if sol is None:
        sol = solve_riccati(theta, cost)
    n, d = theta.n, theta.d
    m = n + d
    P, A_c, H = sol.P, sol.A_c, sol.H
    rhs = np.empty((n * n, m * n))
    for i in range(m):
        for j in range(n):
            E = np.zeros((m, n))
            E[i, j] = 1.0
            C = A_c.T @ P @ E.T @ H
            rhs[:, i * n + j] = (C + C.T).ravel()
    X = np.linalg.solve(_lyapunov_operator(A_c), rhs)
    traces = X.reshape(n, n, m * n).trace(axis1=0, axis2=1)
    return traces.reshape(m, n)


def weighted_norm(M: np.ndarray, V: np.ndarray) -> float:
    """``sqrt(Tr(M' V M))``."""
    M = np.atleast_2d(M)
    return float(math.sqrt(max(np.trace(M.T @ V @ M), 0.0)))


def gradient_inequality_sides(theta: LqParams, cost: CostMatrices, V) -> tuple[float, float]:
    """Both sides of ``|grad J|_V <= |A_c|_2^2 |grad J|_V + 2 |P| |A_c|_2 |H|_V``."""
    V = np.asarray(V, dtype=float)
    m = theta.n + theta.d
    if V.shape != (m, m):
        raise DimensionMismatch(f"V must be {m}x{m}, got {V.shape}")
    if np.max(np.abs(V - V.T)) > 1e-12 or np.linalg.eigvalsh(V)[0] <= 0:
        raise NotPositiveDefinite("V must be symmetric positive definite")
    sol = solve_riccati(theta, cost)
    g = weighted_norm(grad_J(theta, cost, sol), V)
    ac2 = float(np.linalg.norm(sol.A_c, 2))
    rhs = ac2**2 * g + 2.0 * float(np.linalg.norm(sol.P)) * ac2 * weighted_norm(sol.H, V)
    return g, rhs


def gradient_inequality_check(theta: LqParams, cost: CostMatrices, V, slack: float = 1e-8) -> bool:
    lhs, rhs = gradient_inequality_sides(theta, cost, V)
    return lhs <= rhs + slack


def is_admissible(theta: LqParams, cost: CostMatrices, S: AdmissibleSet) -> bool:
    """True iff ``theta`` is stabilizable with ``Tr P <= D`` and ``Tr(theta theta') <= S2``.

    The iteration from ``P0 = Q`` is monotone non-decreasing, so it stops as
    soon as the trace passes ``D``.
    """
    if float(np.sum(theta.theta**2)) > S.S2:
        return False
    try:
        P, _ = _riccati_P(theta, cost, RICCATI_TOL, RICCATI_MAX_ITER, RICCATI_DIVERGENCE,
                          trace_cap=S.D)
    except Unstabilizable:
        return False
    return P is not None and float(np.trace(P)) <= S.D


def riccati_1d_batch(a, b, q: float, r: float, trace_cap: float | None = None,
                     tol: float = RICCATI_TOL, max_iter: int = RICCATI_MAX_ITER,
                     divergence: float = RICCATI_DIVERGENCE) -> np.ndarray:
    """Vectorised scalar Riccati fixed point over arrays of ``(A, B)``.

    Same iteration and stopping rule as :func:`solve_riccati`. Entries that
    diverge (or exceed ``trace_cap``) come back as ``inf``.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    out = np.full(a.shape, np.inf)
    idx = np.arange(a.size)
    a2, b2 = a * a, b * b
    p = np.full(a.shape, float(q))
    cap = divergence if trace_cap is None else min(trace_cap, divergence)
    for _ in range(max_iter):
        if idx.size == 0:
            break
        pa2, pb2, pp = a2[idx], b2[idx], p[idx]
        p_new = q + pa2 * pp - pa2 * pb2 * pp * pp / (r + pb2 * pp)
        bad = ~(p_new <= cap)
        done = (np.abs(p_new - pp) <= tol * np.maximum(1.0, p_new)) & ~bad
        out[idx[done]] = p_new[done]
        p[idx] = p_new
        idx = idx[~(bad | done)]
    return out


@dataclass(frozen=True)
class AdmissibleGrid:
    """Admissible points of a uniform 1-D ``(A, B)`` grid, in lexicographic order."""

    step: float
    A: np.ndarray
    B: np.ndarray
    P: np.ndarray
    K: np.ndarray
    A_c: np.ndarray = field(repr=False)

    @property
    def thetas(self) -> np.ndarray:
        return np.column_stack([self.A, self.B])

    def __len__(self):
        return self.A.size


def admissible_grid(S: AdmissibleSet, cost: CostMatrices, step: float = 0.01) -> AdmissibleGrid:
    """Enumerate the admissible points of the 1-D grid of spacing ``step`` on ``[-S, S]^2``."""
    if cost.Q.shape != (1, 1) or cost.R.shape != (1, 1):
        raise NotOneDimensional("the parameter grid is only defined for n = d = 1")
    half = int(math.floor(S.S / step + 1e-9))
    axis = step * np.arange(-half, half + 1)
    AA, BB = np.meshgrid(axis, axis, indexing="ij")
    A, B = AA.ravel(), BB.ravel()
    keep = A * A + B * B <= S.S2
    A, B = A[keep], B[keep]
    q, r = float(cost.Q[0, 0]), float(cost.R[0, 0])
    P = riccati_1d_batch(A, B, q, r, trace_cap=S.D)
    ok = P <= S.D
    A, B, P = A[ok], B[ok], P[ok]
    K = -B * P * A / (r + B * B * P)
    return AdmissibleGrid(step=step, A=A, B=B, P=P, K=K, A_c=A + B * K)


def admissible_set_constants(
    S: AdmissibleSet,
    cost: CostMatrices,
    n: int = 1,
    d: int = 1,
    step: float = 0.01,
    samples=None,
) -> tuple[float, float]:
    """Grid (or sample) estimates of ``rho = sup |A_c|_2`` and ``C = sup |K|_2`` over S.

    These are lower estimates of the true suprema. For ``n = d = 1`` a grid
    of spacing ``step`` is used; otherwise ``samples`` (an iterable of
    ``theta`` arrays of shape ``(n + d, n)``) must be supplied.
    """
    if samples is None:
        if n != 1 or d != 1:
            raise NotOneDimensional("pass `samples` for n, d > 1")
        grid = admissible_grid(S, cost, step)
        if len(grid) == 0:
            raise EmptyAdmissibleSet(f"no admissible grid point at step {step}")
        return float(np.max(np.abs(grid.A_c))), float(np.max(np.abs(grid.K)))
    rho = C = -np.inf
    for th in samples:
        p = LqParams.from_theta(th, n)
        if not is_admissible(p, cost, S):
            continue
        sol = solve_riccati(p, cost)
        rho = max(rho, float(np.linalg.norm(sol.A_c, 2)))
        C = max(C, float(np.linalg.norm(sol.K, 2)))
    if rho == -np.inf:
        raise EmptyAdmissibleSet("no admissible sample")
    return rho, C
