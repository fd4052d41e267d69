"""Benchmark harness: problem generation, cached reference solutions,
solver races, and trace persistence.

Families follow the paper-style experiments at configurable scale:
dense Gaussian LASSO, LASSO with a 3-D forward-difference operator,
group LASSO with uniform-[0,1] data, and non-negative least squares.
Desk-scale defaults shrink the original dimensions by roughly 10x so the
full acceptance suite runs in minutes; the original dimensions remain
available through explicit size arguments (``--paper-scale`` in the CLI).

The right-hand sides are not pinned by the source experiments and are
generated as documented per family below (Gaussian and NNLS: sparse
ground truth plus 1% noise; diff3d: standard normal; group: uniform).
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from . import __version__
from .prox import GroupL2, L1Norm, NonNeg
from .solver import SOLVERS, ProblemSpec, SolverOptions, run_fista_bb
from .trace import ConvergenceTrace

__all__ = [
    "ProblemRecipe",
    "ReferenceSolution",
    "RaceEntry",
    "generate",
    "reference_solution",
    "race",
    "write_trace_csv",
    "read_trace_csv",
    "write_manifest",
    "write_gnuplot_script",
    "desk_recipes",
    "default_cache_dir",
]

TRACE_HEADER = "iter,obj_err,step_norm,seconds"

FAMILIES = ("lasso_gaussian", "lasso_diff3d", "group_lasso", "nnls")


@dataclass(frozen=True)
class ProblemRecipe:
    """Deterministic description of a benchmark instance."""

    family: str
    m: int = 0
    n: int = 0
    side: int = 0          # grid side for the diff3d family
    lam: float = 0.1
    block_cap: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; "
                             f"known: {FAMILIES}")
        if self.family == "lasso_diff3d":
            if self.side <= 0:
                raise ValueError("diff3d needs a positive grid side")
        elif self.m <= 0 or self.n <= 0:
            raise ValueError("m and n must be positive")

    def digest(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def label(self):
        size = f"{self.side}^3" if self.family == "lasso_diff3d" else \
            f"{self.m}x{self.n}"
        return f"{self.family}_{size}_s{self.seed}"


def desk_recipes(seed=0):
    """The three desk-scale race instances used by the acceptance suite."""
    return [
        ProblemRecipe("lasso_gaussian", m=150, n=300, lam=0.1, seed=seed),
        ProblemRecipe("lasso_diff3d", side=7, lam=1.0, seed=seed),
        ProblemRecipe("group_lasso", m=160, n=250, lam=1.0, block_cap=12,
                      seed=seed),
    ]


def diff3d_operator(side):
    """Concatenated forward-difference stencils along the three axes of an
    ``side^3`` grid, with zero rows on the far (Neumann) boundaries.
    Every non-zero row holds exactly one -1 and one +1."""
    n = side ** 3
    idx = np.arange(n).reshape(side, side, side)
    rows, cols, vals = [], [], []
    row = 0
    for axis in range(3):
        shifted = np.roll(idx, -1, axis=axis)
        interior = np.ones((side, side, side), dtype=bool)
        sl = [slice(None)] * 3
        sl[axis] = side - 1
        interior[tuple(sl)] = False
        src = idx[interior].ravel()
        dst = shifted[interior].ravel()
        r = row + np.nonzero(interior.ravel())[0]
        rows.extend(np.repeat(r, 2))
        cols.extend(np.column_stack([src, dst]).ravel())
        vals.extend(np.tile([-1.0, 1.0], src.size))
        row += n
    return sp.csr_matrix((vals, (rows, cols)), shape=(3 * n, n))


def estimate_sq_norm(A, iters=50, tol=1e-8):
    """Power iteration for ``||A^T A||_2`` with a deterministic start.

    The start vector is random (seeded) so it cannot fall inside the null
    space of structured operators such as difference stencils.
    """
    n = A.shape[1]
    v = np.random.default_rng(12345).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = A.T @ (A @ v)
        lam_new = float(np.linalg.norm(w))
        if lam_new == 0.0:
            return 0.0
        v = w / lam_new
        if abs(lam_new - lam) <= tol * lam_new:
            lam = lam_new
            break
        lam = lam_new
    return lam


def _group_blocks(rng, n, cap):
    sizes = []
    left = n
    while left > 0:
        size = int(rng.integers(1, cap + 1))
        size = min(size, left)
        sizes.append(size)
        left -= size
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    return [np.arange(s, s + size) for s, size in zip(starts, sizes)]


def generate(recipe: ProblemRecipe) -> ProblemSpec:
    """Instantiate a recipe; a pure function of its fields."""
    rng = np.random.default_rng(recipe.seed)
    blocks = None
    if recipe.family == "lasso_gaussian":
        A = rng.standard_normal((recipe.m, recipe.n))
        k = max(1, recipe.m // 10)
        x0 = np.zeros(recipe.n)
        support = rng.choice(recipe.n, size=k, replace=False)
        x0[support] = rng.choice([-1.0, 1.0], size=k) * (1.0 + rng.random(k))
        b = A @ x0 + 0.01 * rng.standard_normal(recipe.m)
        h = L1Norm(recipe.lam)
    elif recipe.family == "lasso_diff3d":
        A = diff3d_operator(recipe.side)
        b = rng.standard_normal(A.shape[0])
        h = L1Norm(recipe.lam)
    elif recipe.family == "group_lasso":
        A = rng.random((recipe.m, recipe.n))
        b = rng.random(recipe.m)
        blocks = _group_blocks(rng, recipe.n, recipe.block_cap)
        h = GroupL2(recipe.lam, blocks)
    elif recipe.family == "nnls":
        A = rng.standard_normal((recipe.m, recipe.n))
        k = max(1, recipe.m // 10)
        x0 = np.zeros(recipe.n)
        support = rng.choice(recipe.n, size=k, replace=False)
        x0[support] = np.abs(rng.standard_normal(k)) + 0.5
        b = A @ x0 + 0.01 * rng.standard_normal(recipe.m)
        h = NonNeg()
    else:  # pragma: no cover - guarded by the recipe constructor
        raise ValueError(recipe.family)

    n = A.shape[1]

    def f(x, A=A, b=b):
        r = A @ x - b
        return 0.5 * float(np.dot(r, r))

    def grad(x, A=A, b=b):
        return A.T @ (A @ x - b)

    problem = ProblemSpec(dim=n, f=f, grad=grad, h=h,
                          lipschitz=estimate_sq_norm(A),
                          name=recipe.label(), recipe=recipe)
    problem.A = A
    problem.b = b
    problem.blocks = blocks
    return problem


# -- reference solutions -------------------------------------------------------


@dataclass
class ReferenceSolution:
    x_star: np.ndarray
    f_star: float
    approximate: bool
    cache_hit: bool


def default_cache_dir():
    return os.environ.get("PROXQN_CACHE_DIR",
                          os.path.join(os.getcwd(), ".proxqn-cache"))


def _polish_l1(problem, x, lam):
    """Support polish for LASSO: solve the stationarity system on the
    detected support; used only when it strictly decreases F."""
    A = problem.A
    if sp.issparse(A):
        A = A.toarray()
    support = np.abs(x) > 1e-9 * max(1.0, float(np.max(np.abs(x), initial=0.0)))
    if not np.any(support):
        return None
    As = A[:, support]
    rhs = As.T @ problem.b - lam * np.sign(x[support])
    sol, *_ = np.linalg.lstsq(As.T @ As, rhs, rcond=None)
    candidate = np.zeros_like(x)
    candidate[support] = sol
    return candidate


def _polish_nonneg(problem, x):
    A = problem.A
    if sp.issparse(A):
        A = A.toarray()
    free = x > 1e-9 * max(1.0, float(np.max(x, initial=0.0)))
    if not np.any(free):
        return None
    sol, *_ = np.linalg.lstsq(A[:, free], problem.b, rcond=None)
    if np.any(sol < 0):
        return None
    candidate = np.zeros_like(x)
    candidate[free] = sol
    return candidate


def reference_solution(problem, tol=1e-12, max_iters=400_000, cache_dir=None,
                       use_cache=True) -> ReferenceSolution:
    """High-accuracy reference optimum, cached on disk by recipe digest.

    Runs restarted FISTA to the step-norm tolerance (flagged approximate
    if the iteration cap is reached first), then attempts an exact
    support polish for l1/non-negative problems, kept only when it
    strictly decreases the objective.
    """
    cache_dir = cache_dir or default_cache_dir()
    key = None
    if use_cache and problem.recipe is not None:
        key = f"{problem.recipe.digest()}_t{tol:g}"
        xpath = os.path.join(cache_dir, key + ".npy")
        jpath = os.path.join(cache_dir, key + ".json")
        if os.path.exists(xpath) and os.path.exists(jpath):
            with open(jpath) as fh:
                meta = json.load(fh)
            return ReferenceSolution(np.load(xpath), meta["f_star"],
                                     meta["approximate"], True)

    opts = SolverOptions(max_iters=max_iters, tol=tol, restart_every=500)
    result = run_fista_bb(problem, opts)
    x, f_val = result.x, result.objective
    if isinstance(problem.h, L1Norm):
        candidate = _polish_l1(problem, x, problem.h.lam)
    elif isinstance(problem.h, NonNeg):
        candidate = _polish_nonneg(problem, x)
    else:
        candidate = None
    if candidate is not None:
        f_cand = problem.objective(candidate)
        if f_cand < f_val:
            x, f_val = candidate, f_cand
    ref = ReferenceSolution(x, f_val, not result.converged, False)

    if key is not None:
        os.makedirs(cache_dir, exist_ok=True)
        np.save(os.path.join(cache_dir, key + ".npy"), ref.x_star)
        with open(os.path.join(cache_dir, key + ".json"), "w") as fh:
            json.dump({"f_star": ref.f_star, "approximate": ref.approximate,
                       "recipe": asdict(problem.recipe), "tol": tol,
                       "version": __version__}, fh, indent=1)
    return ref


# -- races ----------------------------------------------------------------------


@dataclass
class RaceEntry:
    solver_id: str
    problem_id: str
    trace: ConvergenceTrace | None
    result: object = None
    error: str | None = None


def race(problems, solver_ids, max_iters=100_000, budget_seconds=None,
         tol=1e-10, jobs=1, cache_dir=None, solver_opts=None):
    """Run every (solver, problem) pair under identical budgets.

    Warm starts are never shared between solvers; each pair owns its
    state.  Individual solver failures are recorded and the race
    continues.  Returns a list of :class:`RaceEntry`.
    """
    for solver_id in solver_ids:
        if solver_id not in SOLVERS:
            raise KeyError(f"unknown solver {solver_id!r}")
    refs = {id(p): reference_solution(p, cache_dir=cache_dir)
            for p in problems}

    def one(pair):
        solver_id, problem = pair
        opts = SolverOptions(max_iters=max_iters,
                             budget_seconds=budget_seconds, tol=tol,
                             f_star=refs[id(problem)].f_star,
                             **(solver_opts or {}))
        entry = RaceEntry(solver_id, problem.name, None)
        try:
            result = SOLVERS[solver_id](problem, opts)
            entry.trace, entry.result = result.trace, result
        except Exception as exc:  # noqa: BLE001 - recorded, race continues
            entry.error = f"{type(exc).__name__}: {exc}"
        return entry

    pairs = [(s, p) for p in problems for s in solver_ids]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, pairs))
    return [one(pair) for pair in pairs]


# -- persistence -----------------------------------------------------------------


def write_trace_csv(trace: ConvergenceTrace, path, timed=True):
    """One CSV per (solver, problem): ``iter,obj_err,step_norm,seconds``."""
    errs = trace.objective_errors()
    with open(path, "w") as fh:
        fh.write(TRACE_HEADER + "\n")
        for i in range(len(trace)):
            seconds = trace.seconds[i] if timed else 0.0
            fh.write(f"{trace.iters[i]},{errs[i]:.17g},"
                     f"{trace.step_norms[i]:.17g},{seconds:.6f}\n")


def read_trace_csv(path):
    data = np.genfromtxt(path, delimiter=",", names=True)
    return np.atleast_1d(data)


def write_manifest(path, entries, problems, options):
    manifest = {
        "version": __version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "options": options,
        "problems": [
            {"name": p.name, "digest": p.recipe.digest() if p.recipe else None,
             "recipe": asdict(p.recipe) if p.recipe else None}
            for p in problems
        ],
        "runs": [
            {"solver": e.solver_id, "problem": e.problem_id,
             "error": e.error,
             "iterations": None if e.result is None else e.result.iterations,
             "status": None if e.result is None else e.result.status}
            for e in entries
        ],
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1)


def write_gnuplot_script(path, csv_paths):
    """A ready gnuplot script plotting objective error vs seconds."""
    lines = [
        "set logscale y",
        "set xlabel 'seconds'",
        "set ylabel 'objective error'",
        "set datafile separator ','",
        "plot \\",
    ]
    plots = [f"  '{p}' using 4:2 skip 1 with lines title '{os.path.basename(p)}'"
             for p in csv_paths]
    lines.append(", \\\n".join(plots))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
