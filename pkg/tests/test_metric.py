import numpy as np
import pytest

from proxqn.metric import (
    LowRankMetric,
    MetricError,
    NotPositiveDefiniteError,
    PlusMinusMetric,
    apply,
    invert,
    metric_norm_sq,
)
from proxqn.validate import dense_metric


def test_apply_identity_plus_e1():
    m = LowRankMetric(np.ones(2), [np.array([1.0, 0.0])], +1)
    np.testing.assert_allclose(apply(m, [1.0, 1.0]), [2.0, 1.0])


def test_apply_diagonal_rank0():
    m = LowRankMetric([2.0, 3.0])
    np.testing.assert_allclose(apply(m, [1.0, 1.0]), [2.0, 3.0])


def test_apply_matches_dense(rng):
    for sign in (+1, -1):
        d = rng.uniform(0.5, 2.0, 5)
        u = rng.standard_normal(5) * 0.4
        m = LowRankMetric(d, [u], sign)
        V = dense_metric(m)
        x = rng.standard_normal(5)
        np.testing.assert_allclose(m.apply(x), V @ x, atol=1e-12)


def test_apply_dimension_mismatch():
    m = LowRankMetric([1.0, 2.0])
    with pytest.raises(MetricError):
        m.apply(np.ones(3))


def test_invert_rank1():
    m = LowRankMetric(np.ones(2), [np.array([1.0, 0.0])], +1)
    inv = invert(m)
    assert inv.sign_inv == -1
    np.testing.assert_allclose(inv.diag_inv, [1.0, 1.0])
    np.testing.assert_allclose(np.abs(inv.factors_inv[0]),
                               [1.0 / np.sqrt(2.0), 0.0], atol=1e-15)
    np.testing.assert_allclose(dense_metric(m) @ dense_metric(inv), np.eye(2),
                               atol=1e-12)


def test_invert_diagonal():
    inv = invert(LowRankMetric([2.0, 4.0]))
    np.testing.assert_allclose(inv.diag, [0.5, 0.25])
    assert inv.rank == 0


def test_minus_sign_boundary_rejected():
    # ||P^{-1/2} u|| = 1 sits exactly on the PD boundary
    with pytest.raises(NotPositiveDefiniteError):
        LowRankMetric(np.ones(2), [np.array([1.0, 0.0])], -1)


def test_norm_sq_examples(rng):
    assert metric_norm_sq(LowRankMetric(np.ones(2)), [3.0, 4.0]) == 25.0
    m = LowRankMetric(np.ones(2), [np.array([1.0, 0.0])], +1)
    assert metric_norm_sq(m, [1.0, 0.0]) == pytest.approx(2.0)
    d = rng.uniform(0.5, 2.0, 6)
    u = rng.standard_normal(6) * 0.3
    m = LowRankMetric(d, [u], -1)
    x = rng.standard_normal(6)
    np.testing.assert_allclose(m.norm_sq(x), x @ dense_metric(m) @ x,
                               rtol=1e-12)


def test_all_constructed_metrics_positive_definite(rng):
    for _ in range(25):
        n = int(rng.integers(2, 12))
        r = int(rng.integers(0, 3))
        d = rng.uniform(0.5, 2.0, n)
        factors = [rng.standard_normal(n) * 0.4 for _ in range(r)]
        sign = +1 if rng.random() < 0.5 else -1
        try:
            m = LowRankMetric(d, factors, sign)
        except NotPositiveDefiniteError:
            continue
        assert np.linalg.eigvalsh(dense_metric(m))[0] > 0


def test_invert_then_apply_is_identity(rng):
    for _ in range(10):
        n = int(rng.integers(2, 20))
        d = rng.uniform(0.5, 2.0, n)
        u = rng.standard_normal(n)
        u *= np.sqrt(0.5 / np.dot(u, u / d))
        sign = +1 if rng.random() < 0.5 else -1
        m = LowRankMetric(d, [u], sign)
        inv = m.invert()
        assert inv.sign == -m.sign
        for _ in range(10):
            x = rng.standard_normal(n)
            err = np.max(np.abs(inv.apply(m.apply(x)) - x))
            assert err <= 1e-10 * (1.0 + np.max(np.abs(x)))


def test_rank2_inverse(rng):
    n = 7
    d = rng.uniform(0.5, 2.0, n)
    factors = [rng.standard_normal(n) * 0.3 for _ in range(2)]
    m = LowRankMetric(d, factors, -1)
    np.testing.assert_allclose(dense_metric(m) @ dense_metric(m.invert()),
                               np.eye(n), atol=1e-11)


def test_tiny_factors_dropped():
    m = LowRankMetric(np.ones(3), [np.full(3, 1e-14)], +1)
    assert m.rank == 0


def test_dependent_factors_rejected():
    u = np.array([1.0, 2.0, 0.0])
    with pytest.raises(MetricError):
        LowRankMetric(np.ones(3), [u, 2.0 * u], +1)


def test_plus_minus_metric(rng):
    n = 6
    d = rng.uniform(0.5, 2.0, n)
    u1 = rng.standard_normal(n) * 0.5
    u2 = rng.standard_normal(n) * 0.3
    pm = PlusMinusMetric(d, [u1], [u2])
    V = dense_metric(pm)
    assert np.linalg.eigvalsh(V)[0] > 0
    x = rng.standard_normal(n)
    np.testing.assert_allclose(pm.apply(x), V @ x, atol=1e-12)
    with pytest.raises(NotPositiveDefiniteError):
        PlusMinusMetric(np.full(n, 0.01), [], [np.ones(n)])
