"""Proximal maps in diagonal +/- rank-r metrics.

The prox of ``kappa * h`` in ``V = P + sign * U U^T`` reduces to the prox in
the diagonal metric ``P`` evaluated at a shifted point,

    prox^V_{kh}(x) = prox^P_{kh}(x - sign * P^{-1} U alpha*),

where ``alpha*`` is the unique zero of the strongly monotone map

    L(alpha) = U^T (x - prox^P_{kh}(x - sign * P^{-1} U alpha)) + alpha.

This module provides the root problem, three interchangeable root finders
(exact piecewise-affine, bisection, semi-smooth Newton), closed-form and
block special cases, the coupled diag + rank-1 - rank-1 solve, and the
conjugate route through the metric Moreau identity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .metric import LowRankMetric, PlusMinusMetric
from .prox import AffineConstraint, GroupL2

__all__ = [
    "RootFinderError",
    "BracketError",
    "RootProblem",
    "RootSolverReport",
    "root_bound",
    "root_bisection",
    "root_exact_piecewise_affine",
    "root_semismooth_newton",
    "scaled_prox",
    "scaled_prox_rank2",
    "scaled_prox_affine_closed_form",
    "scaled_prox_group_l1l2",
    "scaled_prox_conjugate",
]

logger = logging.getLogger(__name__)

_FD_STEP = 1e-7


class RootFinderError(RuntimeError):
    """A root finder failed to reach its tolerance within budget."""


class BracketError(RootFinderError):
    """The map has the same sign at both bracket ends; this indicates a
    violated metric or operator invariant and is never widened silently."""


@dataclass
class RootSolverReport:
    """Outcome of a low-dimensional root solve."""

    alpha_star: np.ndarray
    residual: float
    iterations: int
    method: str
    converged: bool = True
    residual_history: list = field(default_factory=list)
    point: np.ndarray = None   # prox at alpha_star, when already computed


class RootProblem:
    """The r-dimensional dual root problem behind a scaled prox.

    Carries the strong-monotonicity modulus ``c`` (1 for a plus metric,
    ``1 - ||P^{-1/2} U||^2`` for a minus metric) and the Lipschitz bound
    ``1 + ||P^{-1/2} U||^2`` of the map.
    """

    def __init__(self, metric: LowRankMetric, prox, x, kappa=1.0):
        if kappa <= 0:
            raise ValueError("kappa must be positive")
        self.metric = metric
        self.prox = prox
        self.x = np.asarray(x, dtype=float)
        if self.x.shape != (metric.dim,):
            raise ValueError("query point dimension mismatch")
        self.kappa = float(kappa)
        self.sign = metric.sign
        self.U = metric.factor_matrix
        self.diag = metric.diag
        self._shift_dirs = self.U / self.diag[:, None]  # P^{-1} U
        g_sq = metric.gram_norm_sq()
        self.lipschitz_bound = 1.0 + g_sq
        self.monotonicity_modulus = 1.0 if self.sign > 0 else 1.0 - g_sq
        self.evaluations = 0

    @property
    def rank(self):
        return self.U.shape[1]

    def shifted_point(self, alpha):
        return self.x - self.sign * (self._shift_dirs @ np.atleast_1d(alpha))

    def prox_at(self, alpha):
        return self.prox.prox_diag(self.shifted_point(alpha), self.diag, self.kappa)

    def map_L(self, alpha):
        """The dual map whose unique zero determines the scaled prox."""
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        self.evaluations += 1
        return self.U.T @ (self.x - self.prox_at(alpha)) + alpha

    def jacobian(self, alpha):
        """Clarke-element Jacobian ``I + sign * U^T J_prox P^{-1} U``;
        falls back to forward differences on the map when the operator
        exposes no prox Jacobian."""
        z = self.shifted_point(alpha)
        JW = self.prox.prox_diag_jvp(z, self.diag, self.kappa, self._shift_dirs)
        if JW is None:
            return self._fd_jacobian(alpha)
        return np.eye(self.rank) + self.sign * (self.U.T @ JW)

    def _fd_jacobian(self, alpha):
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        base = self.map_L(alpha)
        G = np.empty((self.rank, self.rank))
        for j in range(self.rank):
            step = np.zeros(self.rank)
            step[j] = _FD_STEP
            G[:, j] = (self.map_L(alpha + step) - base) / _FD_STEP
        return G


def root_bound(problem: RootProblem):
    """Bracket radius ``beta = ||u|| (2 ||x|| + s0)`` for the rank-1 root.

    ``s0`` over-estimates ``||prox^V_h(0)||``: it is zero whenever the
    diagonal prox fixes the origin (all positively homogeneous h), else
    ``q0 (1 + ||u|| g / (c sqrt(d_min)))`` with ``q0 = ||prox^P_{kh}(0)||``,
    which follows from strong monotonicity of the map at x = 0 and
    P-norm non-expansiveness of the diagonal prox.
    """
    if problem.rank != 1:
        raise ValueError("root bound applies to rank-1 problems")
    u = problem.U[:, 0]
    u_norm = float(np.linalg.norm(u))
    q0 = float(np.linalg.norm(
        problem.prox.prox_diag(np.zeros(problem.x.shape[0]), problem.diag,
                               problem.kappa)))
    if q0 == 0.0:
        s0 = 0.0
    else:
        g = np.sqrt(problem.lipschitz_bound - 1.0)
        c = problem.monotonicity_modulus
        s0 = q0 * (1.0 + u_norm * g / (c * np.sqrt(float(np.min(problem.diag)))))
    return u_norm * (2.0 * float(np.linalg.norm(problem.x)) + s0)


def root_bisection(problem: RootProblem, eps=1e-10, max_iter=None):
    """Bisection on ``[-beta, beta]``; terminates once successive midpoints
    are closer than ``eps``, which puts the iterate within ``eps`` of the
    root. Iteration count is the number of midpoint map evaluations."""
    if problem.rank != 1:
        raise ValueError("bisection applies to rank-1 problems")
    if eps <= 0:
        raise ValueError("eps must be positive")
    beta = root_bound(problem)
    if beta == 0.0:
        return RootSolverReport(np.zeros(1), 0.0, 0, "bisection")
    lo, hi = -beta, beta
    f_lo = float(problem.map_L([lo])[0])
    f_hi = float(problem.map_L([hi])[0])
    if f_lo > 0 or f_hi < 0:
        raise BracketError(
            f"map has no sign change on [-beta, beta] = [{lo:.3g}, {hi:.3g}]; "
            "metric or prox invariants are violated"
        )
    if max_iter is None:
        max_iter = int(np.ceil(np.log2(max(2.0 * beta / eps, 2.0)))) + 8
    alpha_prev = None
    alpha = 0.0
    val = np.inf
    count = 0
    for _ in range(max_iter):
        alpha = 0.5 * (lo + hi)
        val = float(problem.map_L([alpha])[0])
        count += 1
        if val > 0:
            hi = alpha
        else:
            lo = alpha
        if val == 0.0:
            break
        if alpha_prev is not None and abs(alpha - alpha_prev) < eps:
            break
        alpha_prev = alpha
    return RootSolverReport(np.array([alpha]), abs(val), count, "bisection")


def root_exact_piecewise_affine(problem: RootProblem, descriptor=None):
    """Exact rank-1 root for separable h with piecewise-affine prox maps.

    The map restricted to each interval between the sorted candidate
    breakpoints ``sign * d_i (x_i - t^j_i) / u_i`` is affine with

        a = 1 + sign * sum_i a^j_i u_i^2 / d_i,
        b = sum_i u_i ((1 - a^j_i) x_i - b^j_i),

    and exactly one coordinate changes segment between consecutive
    candidates, so all interval coefficients follow from one prefix scan
    over the sorted crossings (O(K log K) total, dominated by the sort).
    The root of the bracketing interval is ``-b / a``, exact up to
    floating point.
    """
    if problem.rank != 1:
        raise ValueError("the exact finder applies to rank-1 problems")
    desc = descriptor
    if desc is None:
        desc = problem.prox.pa_descriptor(problem.diag, problem.kappa)
    if desc is None:
        raise ValueError(
            f"{type(problem.prox).__name__} exposes no piecewise-affine "
            "descriptor; use bisection or the semi-smooth Newton finder"
        )
    u = problem.U[:, 0]
    d = problem.diag
    x = problem.x
    s = problem.sign
    mask = u != 0.0
    k = desc.breakpoints.shape[1]

    # segment of every coordinate at alpha -> -inf; infinite breakpoints
    # are never crossed, so they shift the reachable segment range.
    # Coordinates with u_i = 0 never contribute (their terms carry u_i).
    coef = np.where(mask, -s * u / d, 0.0)   # d z_i / d alpha
    if k:
        n_neg_inf = np.sum(desc.breakpoints == -np.inf, axis=1)
        n_pos_inf = np.sum(desc.breakpoints == np.inf, axis=1)
    else:
        n_neg_inf = n_pos_inf = np.zeros(desc.n, dtype=int)
    init_seg = np.where(coef > 0, n_neg_inf, k - n_pos_inf)
    rows = np.arange(desc.n)
    slope0 = desc.slopes[rows, init_seg]
    inter0 = desc.intercepts[rows, init_seg]
    wa = s * u * u / d
    a_init = 1.0 + float(np.sum((slope0 * wa)[mask]))
    b_init = float(np.sum((u * ((1.0 - slope0) * x - inter0))[mask]))

    cand = np.empty(0)
    if k and np.any(mask):
        xm, um, dm = x[mask], u[mask], d[mask]
        with np.errstate(invalid="ignore"):
            cross = s * dm[:, None] * (xm[:, None] - desc.breakpoints[mask]) \
                / um[:, None]
        # segment jump at each crossing: +1 when z_i increases with alpha
        jump = np.where(coef[mask] > 0, 1.0, -1.0)[:, None]
        d_slope = np.diff(desc.slopes[mask], axis=1) * jump
        d_inter = np.diff(desc.intercepts[mask], axis=1) * jump
        delta_a = wa[mask, None] * d_slope
        delta_b = -um[:, None] * (d_slope * xm[:, None] + d_inter)
        finite = np.isfinite(cross)
        if finite.all():
            cand = cross.ravel()
            delta_a, delta_b = delta_a.ravel(), delta_b.ravel()
        else:
            cand = cross[finite]
            delta_a, delta_b = delta_a[finite], delta_b[finite]
        if cand.size:
            order = np.argsort(cand)
            cand = cand[order]
            a_vals = a_init + np.cumsum(delta_a[order])
            b_vals = b_init + np.cumsum(delta_b[order])
            # collapse tied crossings so interval states are consistent
            if cand.size > 1:
                last = np.append(cand[1:] != cand[:-1], True)
                if not last.all():
                    cand = cand[last]
                    a_vals, b_vals = a_vals[last], b_vals[last]

    def finish(alpha):
        # one prox evaluation serves both the report residual and the
        # returned point
        p = problem.prox_at([alpha])
        residual = abs(float(np.dot(u, x - p)) + alpha)
        return RootSolverReport(np.array([alpha]), residual, 0, "exact",
                                point=p)

    if cand.size == 0:
        if a_init <= 0.0:
            raise RootFinderError("non-positive slope; invariants violated")
        return finish(-b_init / a_init)

    # L at the candidates (continuous, non-decreasing up to rounding);
    # locate the sign change and solve on that interval
    l_vals = a_vals * cand + b_vals
    idx = int(np.searchsorted(l_vals, 0.0, side="right"))
    best = None
    for m in (idx - 1, idx - 2, idx):
        if m < -1 or m >= cand.size:
            continue
        a_coef = a_init if m < 0 else float(a_vals[m])
        b_coef = b_init if m < 0 else float(b_vals[m])
        if a_coef <= 0.0:
            continue
        alpha = -b_coef / a_coef
        lo = -np.inf if m < 0 else cand[m]
        hi = np.inf if m + 1 >= cand.size else cand[m + 1]
        pad = 1e-12 * (1.0 + abs(alpha))
        if lo - pad <= alpha <= hi + pad:
            best = alpha
            break
        if best is None:
            best = min(max(alpha, lo), hi)
    if best is None:
        raise RootFinderError("no bracketing interval; invariants violated")
    return finish(best)


def root_semismooth_newton(problem: RootProblem, tol=1e-12, alpha0=None,
                           max_iter=50, eta=0.0):
    """Semi-smooth Newton on the dual map with exact r-by-r solves.

    ``eta`` is the inexactness knob of the underlying scheme; the default 0
    keeps the linear solves exact (r <= 2 here).  For r = 1 the iteration
    is safeguarded by the bisection bracket, for r >= 2 a damped
    fixed-point sweep takes over after budget exhaustion.
    """
    r = problem.rank
    if r < 1:
        raise ValueError("root problem is trivial (rank 0)")
    alpha = np.zeros(r) if alpha0 is None else \
        np.atleast_1d(np.asarray(alpha0, dtype=float)).copy()
    c = problem.monotonicity_modulus
    history = []

    bracket = None
    if r == 1:
        beta = root_bound(problem)
        span = max(beta, abs(float(alpha[0]))) or 1.0
        bracket = [-span, span]

    val = problem.map_L(alpha)
    res = float(np.linalg.norm(val))
    history.append(res)
    for it in range(max_iter):
        if res <= tol:
            return RootSolverReport(alpha, res, it, "ssnewton",
                                    residual_history=history)
        if bracket is not None:
            if val[0] > 0:
                bracket[1] = min(bracket[1], float(alpha[0]))
            else:
                bracket[0] = max(bracket[0], float(alpha[0]))
        G = problem.jacobian(alpha)
        try:
            step = np.linalg.solve(G, val)
        except np.linalg.LinAlgError:
            logger.info("singular generalized Jacobian; regularizing with c*I")
            step = np.linalg.solve(G + c * np.eye(r), val)
        if not np.all(np.isfinite(step)):
            step = val / problem.lipschitz_bound
        new = alpha - step
        if bracket is not None and not (bracket[0] <= new[0] <= bracket[1]):
            new = np.array([0.5 * (bracket[0] + bracket[1])])
        alpha = new
        val = problem.map_L(alpha)
        res = float(np.linalg.norm(val))
        history.append(res)
    if res <= tol:
        return RootSolverReport(alpha, res, max_iter, "ssnewton",
                                residual_history=history)

    # budget exhausted: globally convergent fallbacks
    if r == 1:
        eps = tol / problem.lipschitz_bound
        fb = root_bisection(problem, eps=max(eps, 1e-15))
        fb.method = "ssnewton"
        fb.iterations += max_iter
        fb.residual_history = history + [fb.residual]
        return fb
    step_size = c / problem.lipschitz_bound ** 2
    for it in range(10000):
        if res <= tol:
            break
        alpha = alpha - step_size * val
        val = problem.map_L(alpha)
        res = float(np.linalg.norm(val))
    history.append(res)
    if res > tol:
        raise RootFinderError(
            f"semi-smooth Newton failed to reach {tol:g} (residual {res:g})")
    return RootSolverReport(alpha, res, max_iter + it + 1, "ssnewton",
                            residual_history=history)


# -- dispatcher ----------------------------------------------------------------


def scaled_prox(metric: LowRankMetric, prox, x, kappa=1.0, finder="auto",
                tol=1e-12, warm_alpha=None):
    """Prox of ``kappa * h`` in the metric ``V = P + sign U U^T``.

    Parameters
    ----------
    finder : {"auto", "exact", "bisection", "ssnewton", "closed_form", "group"}
        Root-finding strategy.  "auto" picks the closed form for affine
        constraints, the exact piecewise-affine solver when a descriptor
        exists, the breakpoint+Newton path for group norms, and
        semi-smooth Newton otherwise.
    tol : float
        Alpha tolerance for bisection, residual tolerance otherwise.
    warm_alpha : array, optional
        Starting point for the iterative finders (continuation across
        forward-backward iterations).

    Returns
    -------
    (p, report) : the prox point and the root-solver report.
    """
    problem = RootProblem(metric, prox, x, kappa)
    if problem.rank == 0:
        p = prox.prox_diag(problem.x, metric.diag, kappa)
        return p, RootSolverReport(np.zeros(0), 0.0, 0, "diagonal")
    if warm_alpha is not None and \
            np.atleast_1d(warm_alpha).size != problem.rank:
        warm_alpha = None

    descriptor = None
    if finder == "auto":
        if isinstance(prox, AffineConstraint) and problem.rank == 1:
            finder = "closed_form"
        else:
            descriptor = prox.pa_descriptor(metric.diag, kappa) \
                if problem.rank == 1 else None
            if descriptor is not None:
                finder = "exact"
            elif problem.rank == 1 and isinstance(prox, GroupL2):
                finder = "group"
            else:
                finder = "ssnewton"

    if finder == "exact":
        report = root_exact_piecewise_affine(problem, descriptor=descriptor)
    elif finder == "bisection":
        report = root_bisection(problem, eps=tol)
    elif finder == "ssnewton":
        report = root_semismooth_newton(problem, tol=tol, alpha0=warm_alpha)
    elif finder == "closed_form":
        return scaled_prox_affine_closed_form(metric, prox.A, prox.b, x,
                                              prox=prox, kappa=kappa)
    elif finder == "group":
        return scaled_prox_group_l1l2(metric, prox, x, kappa=kappa, tol=tol)
    else:
        raise ValueError(f"unknown finder {finder!r}")
    p = report.point if report.point is not None \
        else problem.prox_at(report.alpha_star)
    return p, report


def scaled_prox_affine_closed_form(metric: LowRankMetric, A, b, x, prox=None,
                                   kappa=1.0):
    """Closed-form rank-1 scaled prox for ``h = indicator(A z = b)``.

    With ``Y = A D^{-1/2}`` and ``Pi`` the projector on ``ker(Y)``,

        alpha* = <u, D^{-1/2}(c - (I - Pi) D^{1/2} x)>
                 / (1 + sign <u, D^{-1/2} Pi D^{-1/2} u>),

    followed by one diagonal-metric projection; no iteration.
    """
    if metric.rank != 1:
        raise ValueError("closed form applies to rank-1 metrics")
    if prox is None:
        prox = AffineConstraint(A, b)
    from scipy.linalg import cho_factor, cho_solve

    d = metric.diag
    u = metric.factor_matrix[:, 0]
    s = metric.sign
    x = np.asarray(x, dtype=float)
    d_half = np.sqrt(d)
    Y = np.asarray(A, dtype=float) / d_half[None, :]
    factor = cho_factor(Y @ Y.T)

    def pinv_apply(w):
        return Y.T @ cho_solve(factor, w)

    c_vec = pinv_apply(np.asarray(b, dtype=float))
    t = d_half * x
    not_pi_t = pinv_apply(Y @ t)          # (I - Pi) D^{1/2} x
    w = u / d_half
    pi_w = w - pinv_apply(Y @ w)
    denom = 1.0 + s * float(np.dot(w, pi_w))
    if denom <= 0.0:
        raise RootFinderError("non-positive closed-form denominator; "
                              "metric invariants violated")
    alpha = float(np.dot(u, (c_vec - not_pi_t) / d_half)) / denom
    p = prox.prox_diag(x - s * alpha * u / d, d, kappa)
    problem = RootProblem(metric, prox, x, kappa)
    residual = abs(float(problem.map_L([alpha])[0]))
    return p, RootSolverReport(np.array([alpha]), residual, 0, "closed_form")


def scaled_prox_group_l1l2(metric: LowRankMetric, prox: GroupL2, x, kappa=1.0,
                           tol=1e-12, max_iter=100):
    """Rank-1 scaled prox of the group l1-l2 norm.

    The map is piecewise smooth with at most two breakpoints per block,
    the real roots of ``||d_b x_b - sign * alpha u_b||^2 = (kappa lam)^2``.
    Breakpoints are sorted, the sign-change interval located by bisection
    over them, then scalar Newton runs on the smooth piece (falling back
    to bisection inside the interval if it ever leaves it).
    """
    if metric.rank != 1:
        raise ValueError("the group path applies to rank-1 metrics")
    problem = RootProblem(metric, prox, x, kappa)
    u = problem.U[:, 0]
    d = problem.diag
    s = problem.sign
    x = problem.x
    _, db = prox._block_d(d)

    lam_k = kappa * prox.lam
    bps = []
    for bi, blk in enumerate(prox.blocks):
        ub, xb = u[blk], x[blk]
        a2 = float(np.dot(ub, ub))
        if a2 == 0.0:
            continue
        b1 = db[bi] * float(np.dot(xb, ub))
        c0 = db[bi] ** 2 * float(np.dot(xb, xb)) - lam_k ** 2
        disc = b1 * b1 - a2 * c0
        if disc < 0:
            continue
        root = np.sqrt(disc)
        bps.extend(((s * b1 - root) / a2, (s * b1 + root) / a2))
    bps = np.unique(np.asarray(bps, dtype=float))

    beta = root_bound(problem)
    lo, hi = -beta, beta
    evals = 0
    if bps.size:
        lo_i, hi_i = -1, bps.size
        while hi_i - lo_i > 1:
            mid = (lo_i + hi_i) // 2
            evals += 1
            if float(problem.map_L([bps[mid]])[0]) <= 0.0:
                lo_i = mid
            else:
                hi_i = mid
        if lo_i >= 0:
            lo = bps[lo_i]
        if hi_i < bps.size:
            hi = bps[hi_i]
    lo, hi = min(lo, hi), max(hi, lo)

    shift = problem._shift_dirs[:, 0]
    alpha = 0.5 * (lo + hi)
    val = float(problem.map_L([alpha])[0])
    it = 0
    while abs(val) > tol and it < max_iter:
        if val > 0:
            hi = alpha
        else:
            lo = alpha
        z = problem.shifted_point([alpha])
        jv = prox.prox_diag_jvp(z, d, kappa, shift[:, None])[:, 0]
        slope = 1.0 + s * float(np.dot(u, jv))
        new = alpha - val / slope if slope > 0 else None
        if new is None or not (lo <= new <= hi):
            new = 0.5 * (lo + hi)     # Newton left the bracket: bisect
        if new == alpha:
            break
        alpha = new
        val = float(problem.map_L([alpha])[0])
        it += 1
    return problem.prox_at([alpha]), RootSolverReport(
        np.array([alpha]), abs(val), evals + it, "group",
        converged=abs(val) <= tol * 10)


def _newton_scalar_bracketed(func, lo, hi, f_lo, f_hi, tol, max_iter=80,
                             fprime=None):
    """Safeguarded scalar Newton/secant on a strictly increasing map."""
    if f_lo > 0 or f_hi < 0:
        raise BracketError("no sign change on the outer bracket")
    alpha = 0.5 * (lo + hi)
    val = func(alpha)
    a_prev, f_prev = lo, f_lo
    for it in range(max_iter):
        if abs(val) <= tol:
            return alpha, val, it + 1
        if val > 0:
            hi = alpha
        else:
            lo = alpha
        slope = None
        if fprime is not None:
            slope = fprime(alpha)
        if slope is None or slope <= 0:
            denom = val - f_prev
            slope = denom / (alpha - a_prev) if alpha != a_prev and denom != 0 \
                else None
        a_prev, f_prev = alpha, val
        new = alpha - val / slope if slope and slope > 0 else None
        if new is None or not (lo < new < hi):
            new = 0.5 * (lo + hi)
        if new == alpha:
            break
        alpha = new
        val = func(alpha)
    return alpha, val, max_iter


def scaled_prox_rank2(metric: PlusMinusMetric, prox, x, kappa=1.0,
                      method="recursive", tol=1e-12, warm=None,
                      inner_finder="auto"):
    """Prox in ``V = P + Q1 - Q2`` via the coupled two-multiplier system.

    ``method="recursive"`` peels the minus part off first (Theorem-style
    outer rank-1 problem in the metric ``P1 - Q2`` with ``P1 = P + Q1``)
    and solves an inner plus-rank problem per outer evaluation.
    ``method="joint"`` runs semi-smooth Newton on the stacked system; both
    paths agree and are cross-checked in the test-suite.
    """
    x = np.asarray(x, dtype=float)
    if warm is not None and np.atleast_1d(warm).size == 0:
        warm = None
    single = metric.to_single_sign()
    if single is not None:
        return scaled_prox(single, prox, x, kappa=kappa, finder=inner_finder,
                           tol=tol)
    if method == "joint":
        return _rank2_joint(metric, prox, x, kappa, tol, warm)
    if method != "recursive":
        raise ValueError(f"unknown rank-2 method {method!r}")

    U2 = np.column_stack(metric.minus_factors)
    if U2.shape[1] != 1:
        raise ValueError("the recursive path needs exactly one minus factor")
    u2 = U2[:, 0]
    inner_metric = LowRankMetric(metric.diag, metric.plus_factors, +1)
    p1_inv = inner_metric.invert()
    w2 = p1_inv.apply(u2)
    g2_sq = float(np.dot(u2, w2))
    if g2_sq >= 1.0:
        raise RootFinderError("outer metric P1 - Q2 not positive definite")
    c_outer = 1.0 - g2_sq
    inner_tol = min(tol, 1e-13)
    state = {"inner_iters": 0, "warm": None}

    def inner_prox(z):
        p, rep = scaled_prox(inner_metric, prox, z, kappa=kappa,
                             finder=inner_finder, tol=inner_tol,
                             warm_alpha=state["warm"])
        state["inner_iters"] += rep.iterations
        state["warm"] = rep.alpha_star
        return p

    def outer_map(b):
        return float(np.dot(u2, x - inner_prox(x + b * w2))) + b

    # Prop 3.10 bound on the outer problem, with the q0 chain for
    # non-homogeneous h evaluated through the inner metric.
    q0 = float(np.linalg.norm(inner_prox(np.zeros_like(x))))
    u2n = float(np.linalg.norm(u2))
    s0 = 0.0 if q0 == 0.0 else q0 * (
        1.0 + u2n * np.sqrt(g2_sq) / (c_outer * np.sqrt(float(np.min(metric.diag)))))
    beta = u2n * (2.0 * float(np.linalg.norm(x)) + s0)
    b0 = 0.0 if warm is None else float(np.atleast_1d(warm)[-1])
    beta = max(beta, abs(b0)) or 1.0
    b_star, val, outer_iters = _newton_scalar_bracketed(
        outer_map, -beta, beta, outer_map(-beta), outer_map(beta), tol)
    p = inner_prox(x + b_star * w2)
    alpha = np.concatenate([state["warm"] if state["warm"] is not None
                            else np.zeros(0), [b_star]])
    return p, RootSolverReport(alpha, abs(val), outer_iters, "rank2-recursive",
                               converged=abs(val) <= tol * 10)


def _rank2_joint(metric: PlusMinusMetric, prox, x, kappa, tol, warm):
    """Semi-smooth Newton on the stacked system

        F1(a, b) = U1^T (x + P1^{-1} U2 b - p) + a
        F2(a, b) = U2^T (x - p) + b,
        p = prox^P_{kh}(x + P1^{-1} U2 b - P^{-1} U1 a),

    which is Theorem 3.4 recursed through ``V = (P + Q1) - Q2``.
    """
    P = metric.diag
    U1 = np.column_stack(metric.plus_factors)
    U2 = np.column_stack(metric.minus_factors)
    r1, r2 = U1.shape[1], U2.shape[1]
    inner_metric = LowRankMetric(P, metric.plus_factors, +1)
    p1_inv = inner_metric.invert()
    W1 = U1 / P[:, None]
    W2 = np.column_stack([p1_inv.apply(U2[:, j]) for j in range(r2)])

    def arg(ab):
        a, b = ab[:r1], ab[r1:]
        return x + W2 @ b - W1 @ a

    def system(ab):
        z = arg(ab)
        p = prox.prox_diag(z, P, kappa)
        F1 = U1.T @ (x + W2 @ ab[r1:] - p) + ab[:r1]
        F2 = U2.T @ (x - p) + ab[r1:]
        return np.concatenate([F1, F2]), p

    ab = np.asarray(warm, dtype=float).copy() if warm is not None and \
        np.atleast_1d(warm).size == r1 + r2 else np.zeros(r1 + r2)
    val, p = system(ab)
    res = float(np.linalg.norm(val))
    history = [res]
    for it in range(60):
        if res <= tol:
            return p, RootSolverReport(ab, res, it, "rank2-joint",
                                       residual_history=history)
        z = arg(ab)
        J1 = prox.prox_diag_jvp(z, P, kappa, W1)
        J2 = prox.prox_diag_jvp(z, P, kappa, W2)
        if J1 is None or J2 is None:
            G = _fd_system_jacobian(system, ab, val)
        else:
            G = np.block([
                [np.eye(r1) + U1.T @ J1, U1.T @ (W2 - J2)],
                [U2.T @ J1, np.eye(r2) - U2.T @ J2],
            ])
        try:
            step = np.linalg.solve(G, val)
        except np.linalg.LinAlgError:
            step = np.linalg.solve(G + 1e-8 * np.eye(r1 + r2), val)
        new = ab - step
        new_val, new_p = system(new)
        new_res = float(np.linalg.norm(new_val))
        if not np.isfinite(new_res) or new_res > 10 * res + tol:
            break  # diverging: hand over to the recursive path
        ab, val, p, res = new, new_val, new_p, new_res
        history.append(res)
    if res <= tol:
        return p, RootSolverReport(ab, res, len(history), "rank2-joint",
                                   residual_history=history)
    logger.info("joint rank-2 Newton stalled at %.3g; using recursive path", res)
    return scaled_prox_rank2(metric, prox, x, kappa=kappa, method="recursive",
                             tol=tol)


def _fd_system_jacobian(system, ab, base):
    n = ab.size
    G = np.empty((n, n))
    for j in range(n):
        step = np.zeros(n)
        step[j] = _FD_STEP
        G[:, j] = (system(ab + step)[0] - base) / _FD_STEP
    return G


def scaled_prox_conjugate(metric: LowRankMetric, prox, x, rho=1.0,
                          finder="auto", tol=1e-12):
    """Prox of ``rho * h^*`` in V through the metric Moreau identity,

        prox^V_{rho h*}(x) = x - rho V^{-1} prox^{V^{-1}}_{h/rho}(V x / rho),

    computed with the inverse metric (whose low-rank sign flips).
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    x = np.asarray(x, dtype=float)
    inv = metric.invert()
    y = metric.apply(x) / rho
    q, report = scaled_prox(inv, prox, y, kappa=1.0 / rho, finder=finder,
                            tol=tol)
    return x - rho * inv.apply(q), report
