"""Proximal operators in diagonally weighted metrics.

Every operator solves, for a weight vector ``d > 0`` and scale ``kappa > 0``,

    prox_diag(x, d, kappa) = argmin_z  kappa * h(z) + 1/2 * sum_i d_i (x_i - z_i)^2

which is the proximity operator of ``kappa * h`` in the metric ``diag(d)``.
Separable operators additionally expose a piecewise-affine description of
their scalar prox maps (breakpoints / slopes / intercepts), which is what
the exact low-rank root finder consumes.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve

__all__ = [
    "PiecewiseAffineDescriptor",
    "ProxOperator",
    "Zero",
    "L1Norm",
    "NonNeg",
    "Box",
    "Hinge",
    "LinfBall",
    "L1Ball",
    "Simplex",
    "LinfNorm",
    "MaxFunction",
    "GroupL2",
    "AffineConstraint",
    "prox_l1",
    "prox_nonneg",
    "prox_box",
    "prox_hinge",
    "prox_linf_ball",
    "prox_l1_ball",
    "prox_simplex",
    "prox_linf_norm",
    "prox_max",
    "prox_group_l2",
    "prox_affine_constraint",
    "project_simplex_weighted",
    "project_l1_ball_weighted",
]

_FEAS_TOL = 1e-8


def _check_weights(d, n=None):
    d = np.asarray(d, dtype=float)
    if d.ndim == 0:
        if n is None:
            raise ValueError("scalar weights need an explicit dimension")
        d = np.full(n, float(d))
    if np.any(d <= 0):
        raise ValueError("diagonal weights must be strictly positive")
    if n is not None and d.shape[0] != n:
        raise ValueError(f"weights have dimension {d.shape[0]}, expected {n}")
    return d


class PiecewiseAffineDescriptor:
    """Per-coordinate piecewise-affine scalar maps.

    Coordinate ``i`` maps ``z`` to ``slopes[i, j] * z + intercepts[i, j]`` on
    the segment ``[breakpoints[i, j-1], breakpoints[i, j]]`` with the outer
    sentinels ``-inf`` and ``+inf``.  Breakpoints are sorted per row; rows
    may contain ``+-inf`` entries for segments that never activate.

    Invariants (checked by :meth:`validate`): continuity at every finite
    breakpoint and all slopes in ``[0, 1]`` (the maps are monotone and
    non-expansive, as proximal maps of scalar convex functions must be).
    """

    def __init__(self, breakpoints, slopes, intercepts):
        self.breakpoints = np.atleast_2d(np.asarray(breakpoints, dtype=float))
        self.slopes = np.atleast_2d(np.asarray(slopes, dtype=float))
        self.intercepts = np.atleast_2d(np.asarray(intercepts, dtype=float))
        n, k = self.breakpoints.shape
        if self.slopes.shape != (n, k + 1) or self.intercepts.shape != (n, k + 1):
            raise ValueError("descriptor arrays have inconsistent shapes")

    @property
    def n(self):
        return self.breakpoints.shape[0]

    @property
    def segments(self):
        return self.slopes.shape[1]

    def segment_index(self, z, ties="left"):
        """Segment index per coordinate; ``ties='right'`` picks the
        right-hand segment at a breakpoint (the Clarke-element choice)."""
        z = np.asarray(z, dtype=float)
        if ties == "right":
            return np.sum(self.breakpoints <= z[:, None], axis=1)
        return np.sum(self.breakpoints < z[:, None], axis=1)

    def evaluate(self, z):
        """Apply the scalar maps coordinate-wise."""
        idx = self.segment_index(z)
        rows = np.arange(self.n)
        return self.slopes[rows, idx] * z + self.intercepts[rows, idx]

    def slopes_at(self, z):
        """Clarke-element slopes at ``z`` (right segment at breakpoints)."""
        idx = self.segment_index(z, ties="right")
        return self.slopes[np.arange(self.n), idx]

    def validate(self, tol=1e-12):
        """Raise if continuity or the slope range [0, 1] is violated."""
        if np.any(self.slopes < -tol) or np.any(self.slopes > 1 + tol):
            raise ValueError("descriptor slopes outside [0, 1]")
        if self.breakpoints.shape[1] == 0:
            return
        if np.any(np.diff(self.breakpoints, axis=1) < 0):
            raise ValueError("breakpoints not sorted")
        t = self.breakpoints
        left = self.slopes[:, :-1] * t + self.intercepts[:, :-1]
        right = self.slopes[:, 1:] * t + self.intercepts[:, 1:]
        finite = np.isfinite(t)
        scale = np.maximum(1.0, np.abs(t, where=finite, out=np.ones_like(t)))
        gap = np.abs(left - right)
        if np.any(gap[finite] > tol * scale[finite]):
            raise ValueError("descriptor is discontinuous at a breakpoint")


class ProxOperator:
    """Base class: a convex function with a diagonal-metric prox."""

    separable = False
    blocks = None

    def evaluate(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.evaluate(x)

    def prox_diag(self, x, d, kappa=1.0):
        raise NotImplementedError

    def pa_descriptor(self, d, kappa=1.0):
        """Piecewise-affine description of the scalar prox maps, or None."""
        return None

    def prox_diag_jvp(self, z, d, kappa, M):
        """Product of a Clarke Jacobian of ``prox_diag(., d, kappa)`` at
        ``z`` with the columns of ``M``, or None if unavailable."""
        desc = self.pa_descriptor(d, kappa)
        if desc is None:
            return None
        return desc.slopes_at(z)[:, None] * np.atleast_2d(M.T).T

    def conjugate(self):
        """Operator of the convex conjugate, where implemented."""
        return None


# -- separable operators ----------------------------------------------------


class Zero(ProxOperator):
    """The zero function; prox is the identity."""

    separable = True

    def evaluate(self, x):
        return 0.0

    def prox_diag(self, x, d, kappa=1.0):
        return np.array(x, dtype=float, copy=True)

    def pa_descriptor(self, d, kappa=1.0):
        n = _check_weights(d).shape[0]
        return PiecewiseAffineDescriptor(
            np.zeros((n, 0)), np.ones((n, 1)), np.zeros((n, 1))
        )


class L1Norm(ProxOperator):
    """``h(x) = lam * ||x||_1``; weighted soft thresholding."""

    separable = True

    def __init__(self, lam):
        if lam <= 0:
            raise ValueError("l1 weight must be positive")
        self.lam = float(lam)

    def evaluate(self, x):
        return self.lam * float(np.sum(np.abs(x)))

    def prox_diag(self, x, d, kappa=1.0):
        x = np.asarray(x, dtype=float)
        d = _check_weights(d, x.shape[0])
        if kappa <= 0:
            raise ValueError("kappa must be positive")
        t = kappa * self.lam / d
        return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)

    def pa_descriptor(self, d, kappa=1.0):
        d = _check_weights(d)
        t = kappa * self.lam / d
        n = d.shape[0]
        bp = np.empty((n, 2))
        bp[:, 0], bp[:, 1] = -t, t
        slopes = np.empty((n, 3))
        slopes[:, 0] = slopes[:, 2] = 1.0
        slopes[:, 1] = 0.0
        inter = np.zeros((n, 3))
        inter[:, 0], inter[:, 2] = t, -t
        return PiecewiseAffineDescriptor(bp, slopes, inter)

    def conjugate(self):
        return LinfBall(self.lam)


class Box(ProxOperator):
    """Indicator of ``{lo <= x <= hi}``; prox is clipping.

    Bounds may be scalars or vectors and may be infinite on either side.
    """

    separable = True

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        if np.any(self.lo > self.hi):
            raise ValueError("box bounds must satisfy lo <= hi")

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        tol = _FEAS_TOL * (1.0 + float(np.max(np.abs(x), initial=0.0)))
        if np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol):
            return 0.0
        return np.inf

    def prox_diag(self, x, d, kappa=1.0):
        return np.clip(np.asarray(x, dtype=float), self.lo, self.hi)

    def pa_descriptor(self, d, kappa=1.0):
        d = _check_weights(d)
        n = d.shape[0]
        lo = np.broadcast_to(self.lo, (n,)).astype(float)
        hi = np.broadcast_to(self.hi, (n,)).astype(float)
        bp = np.column_stack([lo, hi])
        slopes = np.tile([0.0, 1.0, 0.0], (n, 1))
        inter = np.column_stack([lo, np.zeros(n), hi])
        # clamp intercepts of unreachable infinite segments
        inter[~np.isfinite(lo), 0] = 0.0
        inter[~np.isfinite(hi), 2] = 0.0
        return PiecewiseAffineDescriptor(bp, slopes, inter)


class NonNeg(Box):
    """Indicator of the positive orthant."""

    def __init__(self):
        super().__init__(0.0, np.inf)

    def pa_descriptor(self, d, kappa=1.0):
        n = _check_weights(d).shape[0]
        return PiecewiseAffineDescriptor(
            np.zeros((n, 1)), np.tile([0.0, 1.0], (n, 1)), np.zeros((n, 2))
        )

    def conjugate(self):
        return Box(-np.inf, 0.0)


class LinfBall(Box):
    """Indicator of ``{||x||_inf <= radius}``."""

    def __init__(self, radius):
        if radius <= 0:
            raise ValueError("ball radius must be positive")
        self.radius = float(radius)
        super().__init__(-self.radius, self.radius)

    def conjugate(self):
        return L1Norm(self.radius)


class Hinge(ProxOperator):
    """``h(x) = lam * sum_i max(0, x_i)`` (one-sided shrink)."""

    separable = True

    def __init__(self, lam=1.0):
        if lam <= 0:
            raise ValueError("hinge weight must be positive")
        self.lam = float(lam)

    def evaluate(self, x):
        return self.lam * float(np.sum(np.maximum(np.asarray(x, dtype=float), 0.0)))

    def prox_diag(self, x, d, kappa=1.0):
        x = np.asarray(x, dtype=float)
        d = _check_weights(d, x.shape[0])
        c = kappa * self.lam / d
        return np.where(x > c, x - c, np.minimum(x, 0.0))

    def pa_descriptor(self, d, kappa=1.0):
        d = _check_weights(d)
        n = d.shape[0]
        c = kappa * self.lam / d
        bp = np.column_stack([np.zeros(n), c])
        slopes = np.tile([1.0, 0.0, 1.0], (n, 1))
        inter = np.column_stack([np.zeros(n), np.zeros(n), -c])
        return PiecewiseAffineDescriptor(bp, slopes, inter)

    def conjugate(self):
        return Box(0.0, self.lam)


# -- sorting-based projections ----------------------------------------------


def project_simplex_weighted(y, w, radius):
    """Minimize ``1/2 sum_i w_i (z_i - y_i)^2`` over ``{z >= 0, sum z = radius}``.

    Exact in O(N log N): the optimum is ``z_i = max(0, y_i - theta / w_i)``
    where the multiplier ``theta`` is located by sorting the activation
    values ``w_i y_i``.
    """
    y = np.asarray(y, dtype=float)
    w = _check_weights(w, y.shape[0])
    if radius < 0:
        raise ValueError("simplex radius must be non-negative")
    if radius == 0:
        return np.zeros_like(y)
    v = w * y
    order = np.argsort(-v, kind="stable")
    inv_w = 1.0 / w
    cum_y = np.cumsum(y[order])
    cum_w = np.cumsum(inv_w[order])
    theta_k = (cum_y - radius) / cum_w
    # largest k such that the top-k active set is self-consistent
    valid = theta_k < v[order]
    k = int(np.nonzero(valid)[0][-1])
    theta = theta_k[k]
    return np.maximum(y - theta * inv_w, 0.0)


def _simplex_multiplier(y, w, radius):
    """The multiplier theta of :func:`project_simplex_weighted`."""
    v = w * y
    order = np.argsort(-v, kind="stable")
    cum_y = np.cumsum(y[order])
    cum_w = np.cumsum((1.0 / w)[order])
    theta_k = (cum_y - radius) / cum_w
    valid = theta_k < v[order]
    return theta_k[int(np.nonzero(valid)[0][-1])]


def project_l1_ball_weighted(y, w, radius):
    """Projection onto ``{||z||_1 <= radius}`` in the metric ``diag(w)``."""
    y = np.asarray(y, dtype=float)
    w = _check_weights(w, y.shape[0])
    if radius <= 0:
        raise ValueError("ball radius must be positive")
    if np.sum(np.abs(y)) <= radius:
        return np.array(y, copy=True)
    return np.sign(y) * project_simplex_weighted(np.abs(y), w, radius)


class Simplex(ProxOperator):
    """Indicator of ``{z >= 0, sum z = radius}``."""

    def __init__(self, radius=1.0):
        if radius <= 0:
            raise ValueError("simplex radius must be positive")
        self.radius = float(radius)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        tol = _FEAS_TOL * (1.0 + self.radius)
        if np.all(x >= -tol) and abs(float(np.sum(x)) - self.radius) <= tol:
            return 0.0
        return np.inf

    def prox_diag(self, x, d, kappa=1.0):
        return project_simplex_weighted(x, _check_weights(d, len(x)), self.radius)

    def prox_diag_jvp(self, z, d, kappa, M):
        # Clarke element at the input point: differentiate
        # z -> max(0, z - theta(z)/d) through the active set of the
        # projection of z (non-empty since the radius is positive).
        d = _check_weights(d, len(z))
        active = self.prox_diag(z, d) > 0
        w = 1.0 / d
        M = np.atleast_2d(np.asarray(M, dtype=float).T).T
        out = np.zeros_like(M)
        denom = float(np.sum(w[active]))
        out[active] = M[active] - np.outer(
            w[active], M[active].sum(axis=0) / denom
        )
        return out

    def conjugate(self):
        return MaxFunction(self.radius)


class L1Ball(ProxOperator):
    """Indicator of ``{||z||_1 <= radius}``."""

    def __init__(self, radius=1.0):
        if radius <= 0:
            raise ValueError("ball radius must be positive")
        self.radius = float(radius)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        tol = _FEAS_TOL * (1.0 + self.radius)
        return 0.0 if float(np.sum(np.abs(x))) <= self.radius + tol else np.inf

    def prox_diag(self, x, d, kappa=1.0):
        return project_l1_ball_weighted(x, _check_weights(d, len(x)), self.radius)

    def prox_diag_jvp(self, z, d, kappa, M):
        d = _check_weights(d, len(z))
        M = np.atleast_2d(np.asarray(M, dtype=float).T).T
        # strictly inside the ball: identity; else the signed Jacobian of
        # the weighted-simplex reduction at the projection's active set
        if float(np.sum(np.abs(z))) < self.radius * (1.0 - 1e-12):
            return M.copy()
        s = np.where(z >= 0, 1.0, -1.0)
        active = self.prox_diag(z, d) != 0
        if not np.any(active):
            return np.zeros_like(M)
        w = 1.0 / d
        out = np.zeros_like(M)
        Ms = s[:, None] * M
        denom = float(np.sum(w[active]))
        out[active] = Ms[active] - np.outer(w[active],
                                            Ms[active].sum(axis=0) / denom)
        return s[:, None] * out

    def conjugate(self):
        return LinfNorm(self.radius)


# -- conjugate-route operators ------------------------------------------------


class LinfNorm(ProxOperator):
    """``h(x) = lam * ||x||_inf``, prox via the weighted Moreau identity
    through the l1-ball projector."""

    def __init__(self, lam=1.0):
        if lam < 0:
            raise ValueError("scaling must be non-negative")
        self.lam = float(lam)

    def evaluate(self, x):
        return self.lam * float(np.max(np.abs(x), initial=0.0))

    def prox_diag(self, x, d, kappa=1.0):
        x = np.asarray(x, dtype=float)
        d = _check_weights(d, x.shape[0])
        radius = kappa * self.lam
        if radius == 0:
            return np.array(x, copy=True)
        q = project_l1_ball_weighted(d * x, 1.0 / d, radius)
        return x - q / d

    def conjugate(self):
        return L1Ball(self.lam)


class MaxFunction(ProxOperator):
    """``h(x) = lam * max_i x_i``, prox via the weighted Moreau identity
    through the simplex projector."""

    def __init__(self, lam=1.0):
        if lam < 0:
            raise ValueError("scaling must be non-negative")
        self.lam = float(lam)

    def evaluate(self, x):
        return self.lam * float(np.max(x))

    def prox_diag(self, x, d, kappa=1.0):
        x = np.asarray(x, dtype=float)
        d = _check_weights(d, x.shape[0])
        radius = kappa * self.lam
        if radius == 0:
            return np.array(x, copy=True)
        q = project_simplex_weighted(d * x, 1.0 / d, radius)
        return x - q / d

    def conjugate(self):
        return Simplex(self.lam)


# -- block-separable ----------------------------------------------------------


class GroupL2(ProxOperator):
    """Group sparsity norm ``h(x) = lam * sum_b ||x_b||_2``.

    ``blocks`` must partition the coordinate index set; the diagonal weight
    vector must be constant within each block (block soft-thresholding has
    no closed form otherwise).
    """

    def __init__(self, lam, blocks):
        if lam <= 0:
            raise ValueError("group weight must be positive")
        self.lam = float(lam)
        self.blocks = [np.asarray(b, dtype=np.intp) for b in blocks]
        self._perm = np.concatenate(self.blocks)
        self._sizes = np.array([len(b) for b in self.blocks])
        if np.any(self._sizes == 0):
            raise ValueError("empty block")
        n = self._perm.size
        if np.unique(self._perm).size != n:
            raise ValueError("blocks must be disjoint")
        self._starts = np.concatenate([[0], np.cumsum(self._sizes)[:-1]])
        self.dim = n

    def _block_d(self, d):
        d = _check_weights(d, self.dim)
        dp = d[self._perm]
        db = dp[self._starts]
        if np.any(np.abs(dp - np.repeat(db, self._sizes)) > 1e-12 * np.abs(dp)):
            raise ValueError("diagonal weights must be constant within blocks")
        return d, db

    def _block_norms(self, z):
        zp = z[self._perm]
        return np.sqrt(np.add.reduceat(zp * zp, self._starts)), zp

    def evaluate(self, x):
        norms, _ = self._block_norms(np.asarray(x, dtype=float))
        return self.lam * float(np.sum(norms))

    def prox_diag(self, x, d, kappa=1.0):
        x = np.asarray(x, dtype=float)
        _, db = self._block_d(d)
        norms, xp = self._block_norms(x)
        thresh = kappa * self.lam / db
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(norms > thresh, 1.0 - thresh / norms, 0.0)
        out = np.empty_like(x)
        out[self._perm] = np.repeat(scale, self._sizes) * xp
        return out

    def prox_diag_jvp(self, z, d, kappa, M):
        z = np.asarray(z, dtype=float)
        _, db = self._block_d(d)
        M = np.atleast_2d(np.asarray(M, dtype=float).T).T
        norms, zp = self._block_norms(z)
        thresh = kappa * self.lam / db
        active = norms > thresh
        safe = np.where(norms > 0, norms, 1.0)
        lin = np.where(active, 1.0 - thresh / safe, 0.0)
        curv = np.where(active, thresh / safe ** 3, 0.0)
        Mp = M[self._perm]
        zdotM = np.add.reduceat(zp[:, None] * Mp, self._starts, axis=0)
        outp = np.repeat(lin, self._sizes)[:, None] * Mp + (
            np.repeat(curv, self._sizes)[:, None] * zp[:, None]
        ) * np.repeat(zdotM, self._sizes, axis=0)
        out = np.empty_like(M)
        out[self._perm] = outp
        return out


# -- affine constraint --------------------------------------------------------


class AffineConstraint(ProxOperator):
    """Indicator of ``{z : A z = b}``; prox is the D-weighted projection
    ``z = x + D^{-1} A^T (A D^{-1} A^T)^{-1} (b - A x)``.

    The factorization of ``A D^{-1} A^T`` is cached per weight vector.
    """

    def __init__(self, A, b):
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        if A.ndim != 2 or b.shape != (A.shape[0],):
            raise ValueError("A must be (m, n) and b must be (m,)")
        if np.linalg.matrix_rank(A) < A.shape[0]:
            raise ValueError("A must have full row rank")
        self.A = A
        self.b = b
        self._cache = {}

    def _factor(self, d):
        key = d.tobytes()
        if key not in self._cache:
            AinvD = self.A / d[None, :]
            self._cache[key] = (cho_factor(AinvD @ self.A.T), AinvD)
            if len(self._cache) > 8:
                self._cache.pop(next(iter(self._cache)))
        return self._cache[key]

    def evaluate(self, x):
        r = self.A @ np.asarray(x, dtype=float) - self.b
        tol = _FEAS_TOL * (1.0 + float(np.max(np.abs(self.b), initial=0.0)))
        return 0.0 if float(np.max(np.abs(r), initial=0.0)) <= tol else np.inf

    def prox_diag(self, x, d, kappa=1.0):
        x = np.asarray(x, dtype=float)
        d = _check_weights(d, x.shape[0])
        factor, AinvD = self._factor(d)
        return x + AinvD.T @ cho_solve(factor, self.b - self.A @ x)

    def prox_diag_jvp(self, z, d, kappa, M):
        d = _check_weights(d, len(z))
        factor, AinvD = self._factor(d)
        M = np.atleast_2d(np.asarray(M, dtype=float).T).T
        return M - AinvD.T @ cho_solve(factor, self.A @ M)


# -- functional surface -------------------------------------------------------


def prox_l1(x, lam, d, kappa=1.0):
    """Weighted soft threshold: prox of ``kappa * lam * ||.||_1`` in diag(d)."""
    return L1Norm(lam).prox_diag(x, d, kappa)


def prox_nonneg(x, d):
    return NonNeg().prox_diag(x, d)


def prox_box(x, lo, hi, d):
    return Box(lo, hi).prox_diag(x, d)


def prox_hinge(x, lam, d, kappa=1.0):
    return Hinge(lam).prox_diag(x, d, kappa)


def prox_linf_ball(x, radius, d):
    return LinfBall(radius).prox_diag(x, d)


def prox_l1_ball(x, radius, d):
    return L1Ball(radius).prox_diag(x, d)


def prox_simplex(x, radius, d):
    return Simplex(radius).prox_diag(x, d)


def prox_linf_norm(x, lam, d, kappa=1.0):
    return LinfNorm(lam).prox_diag(x, d, kappa)


def prox_max(x, lam, d, kappa=1.0):
    return MaxFunction(lam).prox_diag(x, d, kappa)


def prox_group_l2(x, lam, blocks, d, kappa=1.0):
    return GroupL2(lam, blocks).prox_diag(x, d, kappa)


def prox_affine_constraint(x, A, b, d):
    return AffineConstraint(A, b).prox_diag(x, d)
