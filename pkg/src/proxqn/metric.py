"""Diagonal plus/minus low-rank symmetric positive definite metrics.

A metric is ``V = P + sign * U U^T`` with ``P`` diagonal and strictly
positive and ``U`` a thin factor matrix of rank ``r``.  All operations
(matrix-vector products, quadratic forms, Sherman-Morrison inversion)
work on the factored form in ``O(N * r)`` without ever assembling the
dense matrix.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "MetricError",
    "NotPositiveDefiniteError",
    "LowRankMetric",
    "MetricInverse",
    "PlusMinusMetric",
    "apply",
    "invert",
    "metric_norm_sq",
    "metric_inner",
]

# Factors shorter than this are dropped (rank reduced), mirroring the
# update-skipping logic of the quasi-Newton constructions.
FACTOR_DROP_TOL = 1e-12


class MetricError(ValueError):
    """Invalid metric data (dimension mismatch, bad sign, rank deficiency)."""


class NotPositiveDefiniteError(MetricError):
    """The requested diagonal - low-rank matrix is not positive definite."""


def _as_vector(x, dim=None, name="x"):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise MetricError(f"{name} must be a 1-d vector, got shape {x.shape}")
    if dim is not None and x.shape[0] != dim:
        raise MetricError(f"{name} has dimension {x.shape[0]}, expected {dim}")
    return x


def _clean_factors(factors, dim):
    """Drop near-zero factors and return a read-only (dim, r) matrix."""
    cols = []
    for i, u in enumerate(factors):
        u = _as_vector(u, dim, name=f"factor {i}")
        if np.linalg.norm(u) >= FACTOR_DROP_TOL:
            cols.append(u)
    if not cols:
        U = np.zeros((dim, 0))
    else:
        U = np.column_stack(cols)
    U.setflags(write=False)
    return U


class LowRankMetric:
    """SPD metric ``V = diag(d) + sign * U U^T``.

    Parameters
    ----------
    diag : array, shape (dim,)
        Strictly positive diagonal of the base matrix ``P``.
    factors : sequence of arrays, each shape (dim,), optional
        Columns ``u_1 .. u_r`` of the low-rank factor ``U``.  Factors with
        norm below ``FACTOR_DROP_TOL`` are dropped.
    sign : {+1, -1}
        Sign applied to the low-rank part ``Q = U U^T``.

    Raises
    ------
    NotPositiveDefiniteError
        If ``sign == -1`` and ``P - U U^T`` is not positive definite
        (checked through the r-by-r Gram test ``I - U^T P^{-1} U > 0``).
    MetricError
        On dimension mismatches, non-positive diagonal, or linearly
        dependent factors.
    """

    def __init__(self, diag, factors=(), sign=+1):
        diag = _as_vector(diag, name="diag").copy()
        if diag.size == 0:
            raise MetricError("empty metric")
        if not np.all(diag > 0):
            raise NotPositiveDefiniteError("diagonal entries must be strictly positive")
        if sign not in (+1, -1):
            raise MetricError(f"sign must be +1 or -1, got {sign!r}")
        self.dim = diag.shape[0]
        diag.setflags(write=False)
        self.diag = diag
        self.sign = int(sign)
        U = _clean_factors(factors, self.dim)
        if U.shape[1] > self.dim:
            raise MetricError(f"rank {U.shape[1]} exceeds dimension {self.dim}")
        self._U = U
        self._validate_factors()

    # -- construction-time checks -------------------------------------

    def _validate_factors(self):
        U = self._U
        r = U.shape[1]
        if r == 0:
            self._gram = np.zeros((0, 0))
            self._gram_norm_sq = 0.0
            return
        # Gram of P^{-1/2} U; rank and positive-definiteness checks are
        # both O(N r^2) + O(r^3) on this small matrix.
        G = U.T @ (U / self.diag[:, None])
        G = 0.5 * (G + G.T)
        ew = np.linalg.eigvalsh(G)
        if ew[0] <= FACTOR_DROP_TOL * max(ew[-1], 1.0):
            raise MetricError("factor vectors are (nearly) linearly dependent")
        self._gram = G
        self._gram_norm_sq = float(ew[-1])
        if self.sign < 0 and ew[-1] >= 1.0:
            raise NotPositiveDefiniteError(
                "diag - low-rank matrix is not positive definite: "
                f"||P^-1/2 U||^2 = {ew[-1]:.6g} >= 1"
            )

    # -- basic queries --------------------------------------------------

    @property
    def rank(self):
        """Rank of the low-rank modification."""
        return self._U.shape[1]

    @property
    def factors(self):
        """List of factor vectors (columns of U)."""
        return [self._U[:, i] for i in range(self._U.shape[1])]

    @property
    def factor_matrix(self):
        """The (dim, r) factor matrix U."""
        return self._U

    def gram_lowrank(self):
        """The r-by-r Gram matrix ``U^T P^{-1} U``."""
        return self._gram

    def gram_norm_sq(self):
        """``||P^{-1/2} U||^2``, the largest eigenvalue of the Gram matrix."""
        return self._gram_norm_sq

    # -- linear algebra --------------------------------------------------

    def apply(self, x):
        """Matrix-vector product ``V x`` in O(N r)."""
        x = _as_vector(x, self.dim)
        y = self.diag * x
        if self.rank:
            y = y + self.sign * (self._U @ (self._U.T @ x))
        return y

    def norm_sq(self, x):
        """Quadratic form ``<x, V x>`` (non-negative, zero iff x = 0)."""
        x = _as_vector(x, self.dim)
        val = float(np.dot(x, self.diag * x))
        if self.rank:
            w = self._U.T @ x
            val += self.sign * float(np.dot(w, w))
        return val

    def inner(self, x, y):
        """Inner product ``<x, V y>``."""
        return float(np.dot(_as_vector(x, self.dim), self.apply(y)))

    def invert(self):
        """Factored inverse via the Sherman-Morrison-Woodbury identity.

        ``V^{-1} = P^{-1} - sign * W W^T`` with
        ``W = P^{-1} U (I_r + sign U^T P^{-1} U)^{-1/2}``; the sign of the
        low-rank part flips.  For r = 1 this reduces to
        ``v = P^{-1} u / sqrt(1 +- u^T P^{-1} u)``.
        """
        diag_inv = 1.0 / self.diag
        if self.rank == 0:
            return MetricInverse(diag_inv, (), +1)
        C = np.eye(self.rank) + self.sign * self._gram
        # C is SPD: for sign +, C >= I; for sign -, PD by the metric invariant.
        ew, EV = np.linalg.eigh(0.5 * (C + C.T))
        if ew[0] <= 0:
            raise NotPositiveDefiniteError("capacitance matrix not positive definite")
        C_inv_half = EV @ np.diag(ew ** -0.5) @ EV.T
        W = (self._U * diag_inv[:, None]) @ C_inv_half
        return MetricInverse(diag_inv, [W[:, i] for i in range(W.shape[1])], -self.sign)

    def __repr__(self):
        s = "+" if self.sign > 0 else "-"
        return f"{type(self).__name__}(dim={self.dim}, rank={self.rank}, sign={s})"


class MetricInverse(LowRankMetric):
    """Factored inverse of a :class:`LowRankMetric` (low-rank sign flipped)."""

    @property
    def diag_inv(self):
        return self.diag

    @property
    def factors_inv(self):
        return self.factors

    @property
    def sign_inv(self):
        return self.sign


class PlusMinusMetric:
    """SPD metric ``V = diag(d) + U1 U1^T - U2 U2^T``.

    This is the structure of the zero-memory BFGS inverse Hessian and its
    companion Hessian.  Positive definiteness is checked through the outer
    Gram test on ``P1 - Q2`` with ``P1 = P + Q1``.
    """

    def __init__(self, diag, plus_factors=(), minus_factors=()):
        diag = _as_vector(diag, name="diag").copy()
        if not np.all(diag > 0):
            raise NotPositiveDefiniteError("diagonal entries must be strictly positive")
        diag.setflags(write=False)
        self.dim = diag.shape[0]
        self.diag = diag
        self._U1 = _clean_factors(plus_factors, self.dim)
        self._U2 = _clean_factors(minus_factors, self.dim)
        if self._U2.shape[1]:
            inner = LowRankMetric(diag, plus_factors, +1) if self._U1.shape[1] else \
                LowRankMetric(diag)
            P1_inv = inner.invert()
            M = self._U2.T @ np.column_stack(
                [P1_inv.apply(self._U2[:, j]) for j in range(self._U2.shape[1])]
            )
            ew = np.linalg.eigvalsh(np.eye(self._U2.shape[1]) - 0.5 * (M + M.T))
            if ew[0] <= 0:
                raise NotPositiveDefiniteError(
                    "diag + Q1 - Q2 is not positive definite "
                    f"(outer Gram eigenvalue {ew[0]:.3g} <= 0)"
                )

    @property
    def plus_factors(self):
        return [self._U1[:, i] for i in range(self._U1.shape[1])]

    @property
    def minus_factors(self):
        return [self._U2[:, i] for i in range(self._U2.shape[1])]

    @property
    def ranks(self):
        return (self._U1.shape[1], self._U2.shape[1])

    def apply(self, x):
        x = _as_vector(x, self.dim)
        y = self.diag * x
        if self._U1.shape[1]:
            y = y + self._U1 @ (self._U1.T @ x)
        if self._U2.shape[1]:
            y = y - self._U2 @ (self._U2.T @ x)
        return y

    def norm_sq(self, x):
        return float(np.dot(_as_vector(x, self.dim), self.apply(x)))

    def to_single_sign(self):
        """Collapse to a :class:`LowRankMetric` when one side is empty."""
        if self._U2.shape[1] == 0:
            return LowRankMetric(self.diag, self.plus_factors, +1)
        if self._U1.shape[1] == 0:
            return LowRankMetric(self.diag, self.minus_factors, -1)
        return None

    def __repr__(self):
        return (f"PlusMinusMetric(dim={self.dim}, "
                f"ranks=+{self._U1.shape[1]}/-{self._U2.shape[1]})")


# Module-level operation surface ------------------------------------------


def apply(metric, x):
    """``V x`` for a factored metric."""
    return metric.apply(x)


def invert(metric):
    """Factored inverse of ``metric``; the low-rank sign flips."""
    return metric.invert()


def metric_norm_sq(metric, x):
    """``<x, V x>``."""
    return metric.norm_sq(x)


def metric_inner(metric, x, y):
    """``<x, V y>``."""
    return metric.inner(x, y)
