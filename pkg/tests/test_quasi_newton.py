import numpy as np
import pytest

from proxqn.metric import LowRankMetric
from proxqn.quasi_newton import (
    CurvatureError,
    QNPair,
    SR1Config,
    bb_stepsizes,
    contraction_rate,
    sr1_eigen_bounds,
    sr1_metric,
    zbfgs_eigen_bounds,
    zbfgs_metric,
)
from proxqn.validate import dense_metric


def test_bb_identity_hessian(rng):
    s = rng.standard_normal(6)
    assert bb_stepsizes(QNPair(s, s)) == (pytest.approx(1.0),
                                          pytest.approx(1.0))


def test_bb_scaled_hessian(rng):
    s = rng.standard_normal(6)
    tau1, tau2 = bb_stepsizes(QNPair(s, 2.0 * s))
    assert tau1 == pytest.approx(0.5) and tau2 == pytest.approx(0.5)


def test_bb_within_spectral_range(rng):
    M = rng.standard_normal((8, 8))
    Q = M @ M.T + 0.5 * np.eye(8)
    ew = np.linalg.eigvalsh(Q)
    for _ in range(10):
        y = rng.standard_normal(8)
        s = np.linalg.solve(Q, y)
        tau1, tau2 = bb_stepsizes(QNPair(s, y))
        assert tau2 <= tau1 + 1e-15
        for tau in (tau1, tau2):
            assert 1.0 / ew[-1] - 1e-12 <= tau <= 1.0 / ew[0] + 1e-12


def test_bb_signals_nonpositive_curvature(rng):
    s = rng.standard_normal(5)
    with pytest.raises(CurvatureError):
        bb_stepsizes(QNPair(s, -s))


def test_sr1_secant_identity(rng):
    s = rng.standard_normal(7)
    cfg = SR1Config(gamma=0.5)
    H = sr1_metric(QNPair(s, s), cfg)
    np.testing.assert_allclose(dense_metric(H),
                               0.5 * np.eye(7) + 0.5 * np.outer(s, s) /
                               np.dot(s, s), atol=1e-12)
    np.testing.assert_allclose(H.apply(s), s, atol=1e-12)


def test_sr1_first_iteration_and_skip(rng):
    H0 = sr1_metric(None, dim=5, tau0=0.25)
    np.testing.assert_allclose(H0.diag, 0.25)
    assert H0.rank == 0
    # orthogonal pair: tau_bb2 clamps to tau_min and the update is skipped
    s = np.array([1.0, 0.0])
    y = np.array([0.0, 1.0])
    H = sr1_metric(QNPair(s, y), SR1Config())
    assert H.rank == 0


def test_sr1_skip_is_scale_invariant(rng):
    cfg = SR1Config()
    for _ in range(20):
        s = rng.standard_normal(6)
        y = rng.standard_normal(6)
        base = sr1_metric(QNPair(s, y), cfg).rank
        for t in (1e-6, 1e3):
            assert sr1_metric(QNPair(t * s, t * y), cfg).rank == base


def test_sr1_random_secant(rng):
    cfg = SR1Config(gamma=0.8)
    for _ in range(20):
        s = rng.standard_normal(9)
        y = s + 0.5 * rng.standard_normal(9)
        H = sr1_metric(QNPair(s, y), cfg)
        if H.rank == 1:
            res = np.max(np.abs(H.apply(y) - s))
            assert res <= 1e-12 * (1.0 + np.max(np.abs(s)))


def test_zbfgs_identity_collapse(rng):
    s = rng.standard_normal(6)
    H, B, skipped = zbfgs_metric(QNPair(s, s), gamma=1.0)
    assert not skipped
    np.testing.assert_allclose(dense_metric(H), np.eye(6), atol=1e-12)
    np.testing.assert_allclose(dense_metric(B), np.eye(6), atol=1e-12)


def test_zbfgs_secant_and_inverse(rng):
    for _ in range(15):
        s = rng.standard_normal(8)
        y = s + 0.6 * rng.standard_normal(8)
        if np.dot(s, y) <= 0:
            continue
        H, B, skipped = zbfgs_metric(QNPair(s, y), gamma=1.0)
        assert not skipped
        res = np.max(np.abs(H.apply(y) - s))
        assert res <= 1e-12 * (1.0 + np.max(np.abs(s)))
        HB = dense_metric(B) @ dense_metric(H)
        assert np.max(np.abs(HB - np.eye(8))) <= 1e-10


def test_zbfgs_curvature_fallback(rng):
    s = rng.standard_normal(5)
    H, B, skipped = zbfgs_metric(QNPair(s, -s), gamma=1.0, tau_fallback=0.5)
    assert skipped
    np.testing.assert_allclose(H.diag, 0.5)
    np.testing.assert_allclose(B.diag, 2.0)


def _spd_pair(rng, mu, L, n):
    q = np.concatenate([[mu, L], rng.uniform(mu, L, n - 2)])
    s = rng.standard_normal(n)
    return QNPair(s, q * s)


def test_sr1_eigenvalues_within_lemma_interval(rng):
    mu, L, gamma = 0.4, 5.0, 0.8
    a, b = sr1_eigen_bounds(mu, L, gamma)
    cfg = SR1Config(gamma=gamma)
    for _ in range(30):
        H = sr1_metric(_spd_pair(rng, mu, L, 10), cfg)
        ew = np.linalg.eigvalsh(dense_metric(H))
        assert ew[0] >= a - 1e-9 and ew[-1] <= b + 1e-9


def test_zbfgs_eigenvalues_within_lemma_interval(rng):
    mu, L, gamma = 0.4, 5.0, 1.0
    a, b = zbfgs_eigen_bounds(mu, L, gamma)
    for _ in range(30):
        H, _, skipped = zbfgs_metric(_spd_pair(rng, mu, L, 10), gamma=gamma)
        if skipped:
            continue
        ew = np.linalg.eigvalsh(dense_metric(H))
        assert ew[0] >= a - 1e-9 and ew[-1] <= b + 1e-9


def test_contraction_rate_formulas():
    # gamma = 1/2 collapses the constants to 3/mu - 2/L and eta = c(3c - 2)
    mu, L = 1.0, 8.0
    _, b = sr1_eigen_bounds(mu, L, 0.5)
    assert b == pytest.approx(3.0 / mu - 2.0 / L)
    kappa = 1.0 / (L * b)
    rho = contraction_rate(mu, L, 0.5, kappa, kappa, variant="sr1")
    eta = L / (2.0 * 0.5 * mu * kappa)
    assert eta == pytest.approx(8.0 * (3 * 8.0 - 2.0))
    assert rho == pytest.approx(1.0 - 1.0 / (8.0 * eta))
    with pytest.raises(ValueError):
        contraction_rate(mu, L, 0.5, kappa, 3.0 / (L * b))


def test_config_validation():
    with pytest.raises(ValueError):
        SR1Config(gamma=1.5)
    with pytest.raises(ValueError):
        SR1Config(tau_min=1.0, tau_max=0.5)
