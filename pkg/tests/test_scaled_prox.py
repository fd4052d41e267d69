import numpy as np
import pytest

from proxqn.metric import LowRankMetric, PlusMinusMetric
from proxqn.prox import (
    AffineConstraint,
    GroupL2,
    L1Ball,
    L1Norm,
    NonNeg,
    Zero,
)
from proxqn.quasi_newton import QNPair, zbfgs_metric
from proxqn.scaled import (
    BracketError,
    RootProblem,
    root_bisection,
    root_bound,
    root_exact_piecewise_affine,
    root_semismooth_newton,
    scaled_prox,
    scaled_prox_affine_closed_form,
    scaled_prox_conjugate,
    scaled_prox_group_l1l2,
    scaled_prox_rank2,
)
from proxqn.validate import (
    brute_force_scaled_prox,
    dense_metric,
    euclidean_prox_for,
    sample_metric,
)


def orthant_worked_example():
    """Positive-orthant instance whose dual map equals a - (1-a)_+ near the
    root: alpha* = 1/2 and the prox is (0.5, 0) (verified by KKT)."""
    metric = LowRankMetric(np.ones(2), [np.array([1.0, 1.0])], +1)
    return metric, NonNeg(), np.array([1.0, -1.0])


def test_rank0_reduces_to_prox_diag_bitwise(rng):
    d = rng.uniform(0.5, 2.0, 9)
    metric = LowRankMetric(d)
    op = L1Norm(0.7)
    x = rng.standard_normal(9)
    p, report = scaled_prox(metric, op, x, kappa=1.3)
    assert report.method == "diagonal"
    assert np.array_equal(p, op.prox_diag(x, d, 1.3))


def test_effectively_diagonal_metric():
    # V = I + e1 e1^T is diag(2, 1): a separable soft threshold
    metric = LowRankMetric(np.ones(2), [np.array([1.0, 0.0])], +1)
    p, _ = scaled_prox(metric, L1Norm(1.0), np.array([2.0, 2.0]))
    np.testing.assert_allclose(p, [1.5, 1.0], atol=1e-12)


def test_rank1_l1_against_brute_force(rng):
    x = rng.standard_normal(4)
    u = np.array([0.5, 0.5, 0.5, 0.5])
    for sign, scale in ((+1, 1.0), (-1, 0.9)):
        # the minus case needs ||u|| scaled strictly inside the PD region
        metric = LowRankMetric(np.ones(4), [scale * u], sign)
        p, _ = scaled_prox(metric, L1Norm(1.0), x)
        z = brute_force_scaled_prox(dense_metric(metric),
                                    euclidean_prox_for("l1", {"lam": 1.0}),
                                    x, 1.0)
        np.testing.assert_allclose(p, z, atol=1e-10)


def test_exact_finder_worked_example():
    metric, op, x = orthant_worked_example()
    problem = RootProblem(metric, op, x)
    report = root_exact_piecewise_affine(problem)
    assert report.alpha_star[0] == pytest.approx(0.5, abs=1e-15)
    assert report.residual <= 1e-15
    np.testing.assert_allclose(problem.prox_at(report.alpha_star), [0.5, 0.0])
    # the map is 2a - 1 on the segment holding the root
    assert problem.map_L([0.2])[0] == pytest.approx(-0.6)
    assert problem.map_L([0.4])[0] == pytest.approx(-0.2)


def test_exact_finder_single_segment(rng):
    # h = 0 has a one-segment descriptor: L(a) = (1 + |u|^2/d) a, root 0
    d = rng.uniform(0.5, 2.0, 5)
    u = rng.standard_normal(5) * 0.5
    metric = LowRankMetric(d, [u], +1)
    report = root_exact_piecewise_affine(RootProblem(metric, Zero(),
                                                     rng.standard_normal(5)))
    assert report.alpha_star[0] == pytest.approx(0.0, abs=1e-14)


def test_exact_requires_descriptor(rng):
    metric = sample_metric(rng, 5)
    with pytest.raises(ValueError):
        root_exact_piecewise_affine(
            RootProblem(metric, L1Ball(1.0), rng.standard_normal(5)))


def test_exact_agrees_with_bisection_on_random_l1(rng):
    worst_res, worst_gap = 0.0, 0.0
    for _ in range(20):
        metric = sample_metric(rng, 50)
        x = rng.standard_normal(50)
        problem = RootProblem(metric, L1Norm(0.8), x)
        exact = root_exact_piecewise_affine(problem)
        bis = root_bisection(problem, eps=1e-10)
        worst_res = max(worst_res, exact.residual)
        worst_gap = max(worst_gap,
                        abs(exact.alpha_star[0] - bis.alpha_star[0]))
    assert worst_res <= 1e-12
    assert worst_gap <= 1e-9


def test_bisection_trivial_root():
    # x = 0 makes the bracket radius collapse and the root is 0
    metric = LowRankMetric(np.ones(3), [np.full(3, 0.4)], +1)
    report = root_bisection(RootProblem(metric, Zero(), np.zeros(3)))
    assert report.alpha_star[0] == 0.0
    assert report.iterations <= 1


def test_bisection_worked_example():
    metric, op, x = orthant_worked_example()
    report = root_bisection(RootProblem(metric, op, x), eps=1e-8)
    assert report.alpha_star[0] == pytest.approx(0.5, abs=1e-8)


def test_bisection_iteration_bound(rng):
    eps = 1e-10
    for _ in range(100):
        n = int(rng.integers(2, 30))
        metric = sample_metric(rng, n)
        x = rng.standard_normal(n)
        problem = RootProblem(metric, L1Norm(0.6), x)
        report = root_bisection(problem, eps=eps)
        beta = root_bound(problem)
        c = problem.monotonicity_modulus
        allowed = int(np.ceil(np.log2(2.0 * c * beta / eps))) + 2
        assert report.iterations <= allowed
        assert abs(report.alpha_star[0]) <= beta + 1e-12


def test_bisection_signals_broken_bracket(rng):
    # corrupt the map so both bracket ends have the same sign
    metric = sample_metric(rng, 4, sign=+1)
    problem = RootProblem(metric, L1Norm(0.5), rng.standard_normal(4))
    problem.map_L = lambda alpha: np.array([1.0])
    with pytest.raises(BracketError):
        root_bisection(problem)


def test_ssnewton_one_step_on_affine_map(rng):
    A = rng.standard_normal((2, 6))
    b = A @ rng.standard_normal(6)
    metric = sample_metric(rng, 6)
    problem = RootProblem(metric, AffineConstraint(A, b),
                          rng.standard_normal(6))
    report = root_semismooth_newton(problem, tol=1e-12)
    assert report.iterations == 1
    assert report.residual <= 1e-12


def test_ssnewton_agrees_with_group_path(rng):
    blocks = [np.arange(0, 3), np.arange(3, 7), np.arange(7, 10)]
    op = GroupL2(0.8, blocks)
    d = np.empty(10)
    for bi, blk in enumerate(blocks):
        d[blk] = (0.7, 1.4, 1.0)[bi]
    u = rng.standard_normal(10)
    u *= np.sqrt(0.5 / np.dot(u, u / d))
    metric = LowRankMetric(d, [u], +1)
    x = rng.standard_normal(10) * 2.0
    problem = RootProblem(metric, op, x)
    newton = root_semismooth_newton(problem, tol=1e-12)
    _, special = scaled_prox_group_l1l2(metric, op, x)
    assert abs(newton.alpha_star[0] - special.alpha_star[0]) <= 1e-10


def test_group_breakpoints_single_block():
    # (1 - a)^2 = 0.25 gives candidate breakpoints {0.5, 1.5}
    blocks = [np.arange(2)]
    op = GroupL2(0.5, blocks)
    metric = LowRankMetric(np.ones(2), [np.array([1.0, 0.0])], +1)
    x = np.array([1.0, 0.0])
    p, report = scaled_prox_group_l1l2(metric, op, x)
    z = brute_force_scaled_prox(
        dense_metric(metric),
        euclidean_prox_for("group_l1l2", {"lam": 0.5, "blocks": blocks}),
        x, 1.0)
    np.testing.assert_allclose(p, z, atol=1e-10)


def test_group_zero_factor_is_block_soft_threshold(rng):
    blocks = [np.arange(0, 2), np.arange(2, 5)]
    op = GroupL2(0.9, blocks)
    d = np.array([1.2, 1.2, 0.6, 0.6, 0.6])
    metric = LowRankMetric(d, [np.zeros(5)], +1)  # factor dropped, rank 0
    x = rng.standard_normal(5)
    p, report = scaled_prox(metric, op, x)
    assert report.method == "diagonal"
    np.testing.assert_allclose(p, op.prox_diag(x, d), atol=1e-14)


def test_group_two_oracle_agreement(rng):
    sizes = rng.integers(1, 5, size=10)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    blocks = [np.arange(s, s + k) for s, k in zip(starts, sizes)]
    n = int(np.sum(sizes))
    op = GroupL2(0.7, blocks)
    vals = rng.uniform(0.5, 2.0, len(blocks))
    d = np.empty(n)
    for bi, blk in enumerate(blocks):
        d[blk] = vals[bi]
    u = rng.standard_normal(n)
    u *= np.sqrt(0.4 / np.dot(u, u / d))
    metric = LowRankMetric(d, [u], -1)
    x = rng.standard_normal(n) * 2.0
    p_special, rep_special = scaled_prox_group_l1l2(metric, op, x, kappa=1.2)
    problem = RootProblem(metric, op, x, kappa=1.2)
    rep_newton = root_semismooth_newton(problem, tol=1e-13)
    assert abs(rep_special.alpha_star[0] - rep_newton.alpha_star[0]) <= 1e-9
    z = brute_force_scaled_prox(
        dense_metric(metric),
        euclidean_prox_for("group_l1l2", {"lam": 0.7, "blocks": blocks}),
        x, 1.2)
    np.testing.assert_allclose(p_special, z, atol=1e-7)


def test_affine_closed_form_cross_method(rng):
    A = np.array([[1.0, 0.0]])
    b = np.zeros(1)
    metric = LowRankMetric(np.ones(2), [np.array([0.0, 1.0])], +1)
    op = AffineConstraint(A, b)
    x = np.array([3.0, 4.0])
    p_cf, rep_cf = scaled_prox_affine_closed_form(metric, A, b, x, prox=op)
    problem = RootProblem(metric, op, x)
    rep_n = root_semismooth_newton(problem, tol=1e-13)
    assert abs(rep_cf.alpha_star[0] - rep_n.alpha_star[0]) <= 1e-10
    np.testing.assert_allclose(p_cf, problem.prox_at(rep_n.alpha_star),
                               atol=1e-10)
    assert rep_cf.iterations == 0


def test_affine_closed_form_feasible_point(rng):
    A = rng.standard_normal((2, 5))
    x = rng.standard_normal(5)
    b = A @ x
    metric = sample_metric(rng, 5)
    p, report = scaled_prox_affine_closed_form(metric, A, b, x)
    assert report.alpha_star[0] == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(p, x, atol=1e-10)


def test_affine_closed_form_kkt(rng):
    from scipy.linalg import null_space

    A = rng.standard_normal((2, 6))
    b = A @ rng.standard_normal(6)
    metric = sample_metric(rng, 6)
    x = rng.standard_normal(6) * 2.0
    p, _ = scaled_prox_affine_closed_form(metric, A, b, x)
    assert np.max(np.abs(A @ p - b)) <= 1e-10
    V = dense_metric(metric)
    for w in null_space(A).T:
        assert abs(np.dot(V @ (p - x), w)) <= 1e-9


def test_rank2_single_sided_reductions(rng):
    d = rng.uniform(0.5, 2.0, 6)
    u = rng.standard_normal(6)
    u *= np.sqrt(0.4 / np.dot(u, u / d))
    x = rng.standard_normal(6)
    op = L1Norm(0.8)
    for pm, sign in ((PlusMinusMetric(d, [u], []), +1),
                     (PlusMinusMetric(d, [], [u]), -1)):
        p2, _ = scaled_prox_rank2(pm, op, x)
        p1, _ = scaled_prox(LowRankMetric(d, [u], sign), op, x)
        np.testing.assert_allclose(p2, p1, atol=1e-12)


def test_rank2_bfgs_metric_against_brute_force(rng):
    n = 30
    s = rng.standard_normal(n)
    y = s + 0.4 * rng.standard_normal(n)
    if np.dot(s, y) <= 0:
        y = s
    _, B, skipped = zbfgs_metric(QNPair(s, y), gamma=1.0)
    assert not skipped
    op = L1Norm(0.5)
    x = rng.standard_normal(n)
    p_rec, _ = scaled_prox_rank2(B, op, x, method="recursive", tol=1e-12)
    p_joint, _ = scaled_prox_rank2(B, op, x, method="joint", tol=1e-12)
    z = brute_force_scaled_prox(dense_metric(B),
                                euclidean_prox_for("l1", {"lam": 0.5}), x,
                                1.0)
    np.testing.assert_allclose(p_rec, z, atol=1e-8)
    np.testing.assert_allclose(p_joint, p_rec, atol=1e-9)


def test_conjugate_identity_metric_reduces_to_plain_moreau(rng):
    metric = LowRankMetric(np.ones(6))
    op = L1Norm(0.9)
    x = rng.standard_normal(6)
    p, _ = scaled_prox_conjugate(metric, op, x)
    # prox of h* = indicator of the linf ball of radius 0.9
    np.testing.assert_allclose(p, np.clip(x, -0.9, 0.9), atol=1e-12)


def test_conjugate_route_linf_in_lowrank_metric(rng):
    d = rng.uniform(0.5, 2.0, 7)
    u = rng.standard_normal(7)
    u *= np.sqrt(0.6 / np.dot(u, u / d))
    metric = LowRankMetric(d, [u], +1)
    op = L1Ball(1.1)
    x = rng.standard_normal(7) * 2.0
    for rho in (1.0, 2.0):
        lhs, _ = scaled_prox_conjugate(metric, op, x, rho=rho, tol=1e-13)
        inv = metric.invert()
        q, _ = scaled_prox(inv, op, metric.apply(x) / rho, kappa=1.0 / rho,
                           tol=1e-13)
        np.testing.assert_allclose(lhs + rho * inv.apply(q), x, atol=1e-10)


def test_subgradient_inclusion_for_l1(rng):
    # V(x - p) must be an element of kappa * lam * sign structure at p
    kappa, lam = 1.4, 0.8
    for _ in range(10):
        n = int(rng.integers(3, 20))
        metric = sample_metric(rng, n)
        x = rng.standard_normal(n) * 2.0
        p, _ = scaled_prox(metric, L1Norm(lam), x, kappa=kappa)
        g = metric.apply(x - p) / (kappa * lam)
        on = np.abs(p) > 1e-12
        assert np.max(np.abs(g[on] - np.sign(p[on]))) <= 1e-8
        assert np.max(np.abs(g[~on]), initial=0.0) <= 1.0 + 1e-8


def test_monotonicity_and_lipschitz_constants(rng):
    for _ in range(5):
        n = int(rng.integers(3, 25))
        metric = sample_metric(rng, n)
        problem = RootProblem(metric, L1Norm(0.7), rng.standard_normal(n))
        c, lip = problem.monotonicity_modulus, problem.lipschitz_bound
        for _ in range(200):
            a, b = rng.uniform(-3, 3), rng.uniform(-3, 3)
            la = problem.map_L([a])[0]
            lb = problem.map_L([b])[0]
            assert (la - lb) * (a - b) >= c * (a - b) ** 2 - 1e-9
            assert abs(la - lb) <= lip * abs(a - b) + 1e-9


def test_warm_start_size_mismatch_ignored(rng):
    metric = sample_metric(rng, 5)
    p, _ = scaled_prox(metric, L1Norm(0.5), rng.standard_normal(5),
                       finder="ssnewton", warm_alpha=np.zeros(0))
    assert p.shape == (5,)
