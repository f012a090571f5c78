import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tslq import (
    ConfidenceParams,
    DimensionMismatch,
    LambdaTooSmall,
    LqParams,
    RlsState,
    beta,
    gamma,
    rls_coverage_experiment,
    rls_update,
    self_normalized_sum,
    solve_riccati,
)
from tslq.lq import CostMatrices
from tslq.rls import gamma_factor, gamma_factor_raw

CONF = ConfidenceParams(delta=0.05, S=2.0, n=1, d=1, T=1000)


def test_update_zero_target():
    s = rls_update(RlsState(1, 1, 1.0), [1.0, 0.0], [0.0])
    np.testing.assert_allclose(s.theta_hat, 0.0)
    np.testing.assert_allclose(s.V, np.diag([2.0, 1.0]))


def test_update_single_observation():
    s = rls_update(RlsState(1, 1, 1.0), [1.0, 0.0], [0.5])
    np.testing.assert_allclose(s.theta_hat[:, 0], [0.25, 0.0], atol=1e-15)


@pytest.mark.parametrize("lam,a,k", [(1.0, 0.7, 5), (2.0, -1.3, 40), (0.5, 2.0, 1)])
def test_repeated_updates_scalar_ridge(lam, a, k):
    s = RlsState(1, 1, lam)
    for _ in range(k):
        s.update([1.0, 0.0], [a])
    assert s.theta_hat[0, 0] == pytest.approx(k * a / (lam + k), rel=1e-12)
    assert s.t == k


def test_update_is_pure_and_checks_dims():
    s = RlsState(1, 1)
    s2 = rls_update(s, [1.0, 2.0], [3.0])
    assert s.t == 0 and s2.t == 1
    np.testing.assert_array_equal(s.V, np.eye(2))
    with pytest.raises(DimensionMismatch):
        s.update([1.0], [1.0])
    with pytest.raises(DimensionMismatch):
        s.update([1.0, 2.0], [1.0, 2.0])


@settings(max_examples=50, deadline=None)
@given(zs=arrays(float, (30, 3), elements=st.floats(-5, 5)),
       xs=arrays(float, (30, 2), elements=st.floats(-5, 5)),
       lam=st.floats(0.1, 10))
def test_state_invariants(zs, xs, lam):
    s = RlsState(2, 1, lam)
    prev = s.log_det()
    for z, x in zip(zs, xs):
        s.update(z, x)
        ld = s.log_det()
        assert ld >= prev - 1e-12
        prev = ld
    np.testing.assert_allclose(s.V - lam * np.eye(3), zs.T @ zs, atol=1e-10)
    np.testing.assert_allclose(s.theta_hat, np.linalg.solve(s.V, s.cross_sum), atol=1e-10)
    assert np.linalg.eigvalsh(s.V - lam * np.eye(3))[0] >= -1e-9


def test_noiseless_recovery_small_lambda(rng):
    theta = rng.standard_normal((3, 2))
    s = RlsState(2, 1, 1e-10)
    for _ in range(50):
        z = rng.standard_normal(3)
        s.update(z, theta.T @ z)
    assert np.linalg.norm(s.theta_hat - theta) <= 1e-6


def test_inv_sqrt_and_norms(rng):
    s = RlsState(1, 2, 1.0)
    for _ in range(10):
        s.update(rng.standard_normal(3), rng.standard_normal(1))
    W = s.inv_sqrt()
    np.testing.assert_allclose(W @ s.V @ W, np.eye(3), atol=1e-10)
    z = rng.standard_normal(3)
    assert s.norm_inv(z) == pytest.approx(math.sqrt(z @ np.linalg.solve(s.V, z)))
    th = rng.standard_normal((3, 1))
    E = s.theta_hat - th
    assert s.weighted_error(th) == pytest.approx(math.sqrt(np.trace(E.T @ s.V @ E)))


# beta / gamma ---------------------------------------------------------------

def test_beta_at_start():
    assert beta(RlsState(1, 1, 1.0), CONF) == pytest.approx(2.0)
    assert beta(RlsState(1, 1, 4.0), CONF) == pytest.approx(4.0)


def test_beta_formula_example():
    s = RlsState(1, 1, 1.0)
    s.update([math.sqrt(3.0), 0.0], [0.0])  # V = diag(4, 1)
    assert beta(s, CONF) == pytest.approx(math.sqrt(math.log(4)) + 2, abs=1e-12)
    assert beta(s, CONF) == pytest.approx(3.1774, abs=1e-4)


def test_beta_monotone_along_run(rng):
    s = RlsState(1, 1)
    b = beta(s, CONF)
    g = gamma(s, CONF)
    for _ in range(100):
        s.update(rng.standard_normal(2), rng.standard_normal(1))
        assert beta(s, CONF) >= b and gamma(s, CONF) >= g
        b, g = beta(s, CONF), gamma(s, CONF)


def test_gamma_formula_and_scaling():
    s = RlsState(1, 1)
    s.update([1.0, 1.0], [0.0])
    conf = ConfidenceParams(delta=0.5, S=2.0, T=1)
    expect = beta(s, conf) * math.sqrt(2 * 2 * math.log(2 * 2 / conf.delta_prime))
    assert gamma(s, conf) == pytest.approx(expect)
    conf2 = ConfidenceParams(delta=0.5, S=4.0, T=1)
    assert gamma(s, conf2) / beta(s, conf2) == pytest.approx(gamma(s, conf) / beta(s, conf))
    assert gamma_factor(ConfidenceParams(0.01, 2.0)) > gamma_factor(ConfidenceParams(0.5, 2.0))


def test_gamma_log_term_equal_two():
    # delta' = 4 / e^2 makes the log equal 2, so the factor is sqrt(2 * 2 * 2)
    assert gamma_factor_raw(1, 1, 4 / math.e**2) == pytest.approx(2 * math.sqrt(2))


def test_confidence_validation():
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            ConfidenceParams(delta=bad, S=1.0)
    with pytest.raises(ValueError):
        ConfidenceParams(delta=0.1, S=1.0, L=0.0)
    assert ConfidenceParams(0.05, 1.0, T=100).delta_prime == pytest.approx(0.05 / 800)


# self-normalised bound ---------------------------------------------------------

def test_self_normalized_empty():
    assert self_normalized_sum(np.zeros((0, 2)), 1.0) == (0.0, 0.0)


def test_self_normalized_single():
    lhs, rhs = self_normalized_sum([[1.0, 0.0]], 1.0)
    assert lhs == pytest.approx(1.0)
    assert rhs == pytest.approx(2 * math.log(2))
    assert lhs <= rhs


def test_self_normalized_requires_lambda_one():
    with pytest.raises(LambdaTooSmall):
        self_normalized_sum([[1.0, 0.0]], 0.5)


def test_self_normalized_random_prefixes(rng):
    zs = rng.uniform(-3, 3, (1000, 3))
    sums, bounds = self_normalized_sum(zs, 1.0, prefixes=True)
    assert np.all(sums <= bounds)
    # bound equals 2 log det ratio computed directly
    V = np.eye(3) + zs.T @ zs
    assert bounds[-1] == pytest.approx(2 * np.linalg.slogdet(V)[1])


@settings(max_examples=40, deadline=None)
@given(zs=arrays(float, (60, 2), elements=st.floats(-20, 20)), lam=st.floats(1, 5))
def test_self_normalized_property(zs, lam):
    sums, bounds = self_normalized_sum(zs, lam, prefixes=True)
    assert np.all(sums <= bounds + 1e-9)


# coverage ---------------------------------------------------------------------

def _gain():
    th = LqParams.scalar(0.9, 0.5)
    return th, solve_riccati(th, CostMatrices.scalar()).K


def test_coverage_delta_half():
    th, K = _gain()
    cov = rls_coverage_experiment(th, K, 1000, 200, ConfidenceParams(0.5, 2.0), seed=3)
    assert cov >= 0.5


def test_coverage_zero_noise():
    th, K = _gain()
    cov = rls_coverage_experiment(th, K, 200, 20, ConfidenceParams(0.1, 2.0), noise_scale=0.0)
    assert cov == 1.0
