"""Forward-backward solvers: quasi-Newton (0SR1, 0BFGS) and first-order
baselines (ISTA, FISTA with Barzilai-Borwein steps, SPG/SpaRSA)."""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .metric import PlusMinusMetric
from .prox import ProxOperator
from .quasi_newton import QNPair, SR1Config, sr1_metric, zbfgs_metric
from .scaled import scaled_prox, scaled_prox_rank2
from .trace import ConvergenceTrace

__all__ = [
    "ProblemSpec",
    "SolverOptions",
    "SolverResult",
    "SolverError",
    "fb_step",
    "line_search",
    "run_zero_sr1",
    "run_zero_bfgs",
    "run_ista",
    "run_fista_bb",
    "run_spg_sparsa",
    "fixed_point_residual",
    "SOLVERS",
]


class SolverError(RuntimeError):
    """A solver aborted (divergence detected or prox failure)."""


@dataclass
class ProblemSpec:
    """A composite problem ``F(x) = f(x) + h(x)``.

    ``f`` must be continuously differentiable with an L-Lipschitz
    gradient; ``h`` is any operator from :mod:`proxqn.prox`.
    """

    dim: int
    f: callable
    grad: callable
    h: ProxOperator
    lipschitz: float | None = None
    strong_convexity: float | None = None
    x_star: np.ndarray | None = None
    f_star: float | None = None
    name: str = "problem"
    recipe: object = None

    def objective(self, x):
        return float(self.f(x)) + float(self.h.evaluate(x))

    def check_gradient(self, rng=None, probes=5, tol=1e-5):
        """Verify grad against central differences on random probes."""
        rng = np.random.default_rng(0) if rng is None else rng
        for _ in range(probes):
            x = rng.standard_normal(self.dim)
            v = rng.standard_normal(self.dim)
            v /= np.linalg.norm(v)
            eps = 1e-6 * (1.0 + np.linalg.norm(x))
            fd = (self.f(x + eps * v) - self.f(x - eps * v)) / (2.0 * eps)
            an = float(np.dot(self.grad(x), v))
            if abs(fd - an) > tol * (1.0 + abs(an)):
                return False
        return True


@dataclass
class SolverOptions:
    max_iters: int = 20000
    tol: float = 1e-10                 # sup-norm threshold on the prox step
    line_search: str = "backtracking"  # or "none"
    gamma: float | None = None         # None: 0.8 for SR1, 1.0 for 0BFGS
    kappa: float | None = None         # None: 1 with the metric absorbing BB
    tau_min: float = 1e-8
    tau_max: float = 1e8
    sigma: float = 1e-4
    max_halvings: int = 30
    x0: np.ndarray | None = None
    budget_seconds: float | None = None
    f_star: float | None = None        # reference objective for the trace
    finder: str = "auto"
    rank2_method: str = "recursive"
    restart_every: int = 1000          # FISTA momentum restart period
    memory: int = 10                   # nonmonotone line-search window
    record_metrics: bool = False


@dataclass
class SolverResult:
    x: np.ndarray
    objective: float
    iterations: int
    converged: bool
    status: str
    trace: ConvergenceTrace
    solver: str = ""
    metrics: list = field(default_factory=list)


def fb_step(x, grad_x, H, B, h, kappa=1.0, finder="auto", warm_alpha=None,
            rank2_method="recursive", tol=1e-12):
    """One forward-backward step ``prox^B_{kappa h}(x - kappa H grad)``.

    ``H`` is the factored inverse-Hessian metric and ``B`` its factored
    inverse; the forward step uses ``H`` directly (never a dense solve).
    """
    forward = x - kappa * H.apply(grad_x)
    if isinstance(B, PlusMinusMetric):
        return scaled_prox_rank2(B, h, forward, kappa=kappa,
                                 method=rank2_method, warm=warm_alpha, tol=tol)
    return scaled_prox(B, h, forward, kappa=kappa, finder=finder, tol=tol,
                       warm_alpha=warm_alpha)


def line_search(problem, x, p, f_x, kappa, mode="backtracking", sigma=1e-4,
                max_halvings=30):
    """Step length along the prox displacement ``p``.

    Mode "none" returns t = 1.  Mode "backtracking" returns the largest
    ``t`` in {1, 1/2, 1/4, ...} with
    ``F(x + t p) <= F(x) - sigma t ||p||^2 / kappa``; if no scale is
    admissible the smallest is returned with a stagnation flag.
    """
    if mode == "none":
        return 1.0, problem.objective(x + p), False
    if mode != "backtracking":
        raise ValueError(f"unknown line-search mode {mode!r}")
    decrease = sigma * float(np.dot(p, p)) / kappa
    t = 1.0
    for _ in range(max_halvings):
        f_new = problem.objective(x + t * p)
        if f_new <= f_x - t * decrease:
            return t, f_new, False
        t *= 0.5
    return t, problem.objective(x + t * p), True


def fixed_point_residual(problem, x, kappa=None):
    """Sup-norm of ``x - prox_{kappa h}(x - kappa grad f(x))``; zero iff x
    satisfies the optimality inclusion ``0 in grad f(x) + dh(x)``."""
    if kappa is None:
        kappa = 1.0 / problem.lipschitz if problem.lipschitz else 1.0
    ones = np.ones(problem.dim)
    p = problem.h.prox_diag(x - kappa * problem.grad(x), ones, kappa)
    return float(np.max(np.abs(x - p), initial=0.0))


# -- shared loop machinery -----------------------------------------------------


class _Run:
    """Bookkeeping shared by all solver loops."""

    def __init__(self, problem, opts, solver_id):
        self.problem = problem
        self.opts = opts
        self.t0 = time.perf_counter()
        self.trace = ConvergenceTrace(solver_id=solver_id,
                                      problem_id=problem.name,
                                      f_star=opts.f_star)
        self.solver_id = solver_id

    def elapsed(self):
        return time.perf_counter() - self.t0

    def record(self, k, f_val, step_norm):
        self.trace.append(k, f_val, step_norm, self.elapsed())

    def out_of_budget(self):
        return (self.opts.budget_seconds is not None
                and self.elapsed() > self.opts.budget_seconds)

    def result(self, x, f_val, k, converged, status, metrics=()):
        return SolverResult(x=x, objective=f_val, iterations=k,
                            converged=converged, status=status,
                            trace=self.trace, solver=self.solver_id,
                            metrics=list(metrics))


def _initial_point(problem, opts):
    if opts.x0 is not None:
        x = np.array(opts.x0, dtype=float, copy=True)
        if x.shape != (problem.dim,):
            raise ValueError("x0 dimension mismatch")
        return x
    return np.zeros(problem.dim)


def _run_quasi_newton(problem, opts, variant):
    run = _Run(problem, opts, "zero-sr1" if variant == "sr1" else "zero-bfgs")
    gamma = opts.gamma if opts.gamma is not None else \
        (0.8 if variant == "sr1" else 1.0)
    cfg = SR1Config(gamma=gamma, tau_min=opts.tau_min, tau_max=opts.tau_max) \
        if variant == "sr1" else None
    tau0 = 1.0 / problem.lipschitz if problem.lipschitz else 1.0
    kappa = opts.kappa if opts.kappa is not None else 1.0

    x = _initial_point(problem, opts)
    g = problem.grad(x)
    f_val = problem.objective(x)
    pair = None
    warm = None
    last_tau = tau0
    metrics = []
    status, converged = "max_iters", False
    k = 0
    for k in range(opts.max_iters):
        if variant == "sr1":
            H = sr1_metric(pair, cfg, dim=problem.dim, tau0=tau0)
            B = H.invert()
        else:
            if pair is None:
                H = PlusMinusMetric(np.full(problem.dim, gamma * tau0))
                B = PlusMinusMetric(np.full(problem.dim, 1.0 / (gamma * tau0)))
            else:
                H, B, skipped = zbfgs_metric(pair, gamma=gamma,
                                             tau_fallback=last_tau)
                if not skipped:
                    last_tau = pair.curvature / float(np.dot(pair.y, pair.y))
        if opts.record_metrics:
            metrics.append((H, pair))

        xbar, report = fb_step(x, g, H, B, problem.h, kappa=kappa,
                               finder=opts.finder, warm_alpha=warm,
                               rank2_method=opts.rank2_method)
        warm = report.alpha_star
        p = xbar - x
        step_norm = float(np.max(np.abs(p), initial=0.0))
        run.record(k, f_val, step_norm)
        if step_norm < opts.tol:
            status, converged = "converged", True
            break
        if run.out_of_budget():
            status = "budget"
            break

        t, f_new, stagnated = line_search(
            problem, x, p, f_val, kappa, mode=opts.line_search,
            sigma=opts.sigma, max_halvings=opts.max_halvings)
        if opts.line_search != "none" and \
                f_new > f_val + 1e-8 * (1.0 + abs(f_val)):
            raise SolverError(
                f"{run.solver_id}: objective increased at iteration {k} "
                f"({f_val:.6g} -> {f_new:.6g}) despite line search")
        x_new = x + t * p
        g_new = problem.grad(x_new)
        s = x_new - x
        # a step at rounding level carries no curvature information and
        # 1/<s,y> would amplify cancellation noise into the metric
        if np.max(np.abs(s)) <= 1e-13 * (1.0 + np.max(np.abs(x_new))):
            pair = None
        else:
            pair = QNPair(s, g_new - g)
        x, g, f_val = x_new, g_new, f_new
        if opts.line_search != "none" and stagnated and t * step_norm < 1e-16:
            status = "stagnated"
            break
    return run.result(x, f_val, k, converged, status, metrics)


def run_zero_sr1(problem, opts=None):
    """Zero-memory SR1 forward-backward (diagonal + rank-1 metric)."""
    return _run_quasi_newton(problem, opts or SolverOptions(), "sr1")


def run_zero_bfgs(problem, opts=None):
    """Zero-memory BFGS forward-backward (diagonal + rank-1 - rank-1)."""
    return _run_quasi_newton(problem, opts or SolverOptions(), "bfgs")


# -- first-order baselines -----------------------------------------------------


def _euclid_prox(h, v, kappa):
    return h.prox_diag(v, np.ones(v.shape[0]), kappa)


def _require_lipschitz(problem, solver):
    if not problem.lipschitz or problem.lipschitz <= 0:
        raise ValueError(f"{solver} needs a gradient Lipschitz estimate")
    return problem.lipschitz


def run_ista(problem, opts=None):
    """Proximal gradient descent with the constant step 1/L."""
    opts = opts or SolverOptions()
    L = _require_lipschitz(problem, "ista")
    run = _Run(problem, opts, "ista")
    kappa = opts.kappa if opts.kappa is not None else 1.0 / L
    x = _initial_point(problem, opts)
    f_val = problem.objective(x)
    status, converged = "max_iters", False
    k = 0
    for k in range(opts.max_iters):
        x_new = _euclid_prox(problem.h, x - kappa * problem.grad(x), kappa)
        step_norm = float(np.max(np.abs(x_new - x), initial=0.0))
        run.record(k, f_val, step_norm)
        if step_norm < opts.tol:
            status, converged = "converged", True
            break
        if run.out_of_budget():
            status = "budget"
            break
        x = x_new
        f_val = problem.objective(x)
    return run.result(x, f_val, k, converged, status)


def run_fista_bb(problem, opts=None):
    """FISTA with Barzilai-Borwein steps, backtracking, and periodic
    momentum restarts."""
    opts = opts or SolverOptions()
    L = _require_lipschitz(problem, "fista-bb")
    run = _Run(problem, opts, "fista-bb")
    x = _initial_point(problem, opts)
    y = x.copy()
    t_mom = 1.0
    kappa = 1.0 / L
    f_val = problem.objective(x)
    g_y = problem.grad(y)
    status, converged = "max_iters", False
    k = 0
    for k in range(opts.max_iters):
        f_y = float(problem.f(y))
        # backtrack kappa until the quadratic upper bound holds at y
        for _ in range(60):
            x_new = _euclid_prox(problem.h, y - kappa * g_y, kappa)
            diff = x_new - y
            quad = f_y + float(np.dot(g_y, diff)) + \
                float(np.dot(diff, diff)) / (2.0 * kappa)
            if float(problem.f(x_new)) <= quad + 1e-12 * (1.0 + abs(quad)):
                break
            kappa *= 0.5
        step_norm = float(np.max(np.abs(x_new - x), initial=0.0))
        run.record(k, f_val, step_norm)
        if step_norm < opts.tol and k > 0:
            x = x_new
            status, converged = "converged", True
            break
        if run.out_of_budget():
            status = "budget"
            break

        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom ** 2))
        y_new = x_new + ((t_mom - 1.0) / t_next) * (x_new - x)
        if (k + 1) % opts.restart_every == 0:
            t_next, y_new = 1.0, x_new.copy()
        g_y_new = problem.grad(y_new)
        sk, yk = y_new - y, g_y_new - g_y
        sy = float(np.dot(sk, yk))
        if sy > 0:
            kappa = min(max(sy / float(np.dot(yk, yk)), 1e-3 / L), 1e6 / L)
        x, y, g_y, t_mom = x_new, y_new, g_y_new, t_next
        f_val = problem.objective(x)
    return run.result(x, f_val, k, converged, status)


def run_spg_sparsa(problem, opts=None):
    """Spectral proximal gradient with a nonmonotone acceptance test over
    the last ``opts.memory`` objective values."""
    opts = opts or SolverOptions()
    L = _require_lipschitz(problem, "spg")
    run = _Run(problem, opts, "spg")
    x = _initial_point(problem, opts)
    g = problem.grad(x)
    f_val = problem.objective(x)
    history = deque([f_val], maxlen=opts.memory)
    kappa = 1.0 / L
    status, converged = "max_iters", False
    k = 0
    for k in range(opts.max_iters):
        kap = kappa
        x_new = x
        f_new = f_val
        for _ in range(60):
            x_new = _euclid_prox(problem.h, x - kap * g, kap)
            dx = x_new - x
            f_new = problem.objective(x_new)
            if f_new <= max(history) - opts.sigma * float(np.dot(dx, dx)) / \
                    (2.0 * kap):
                break
            kap *= 0.5
        step_norm = float(np.max(np.abs(x_new - x), initial=0.0))
        run.record(k, f_val, step_norm)
        if step_norm < opts.tol:
            x = x_new
            status, converged = "converged", True
            break
        if run.out_of_budget():
            status = "budget"
            break
        g_new = problem.grad(x_new)
        sk, yk = x_new - x, g_new - g
        sy = float(np.dot(sk, yk))
        kappa = min(max(sy / float(np.dot(yk, yk)), 1e-3 / L), 1e6 / L) \
            if sy > 0 else 1.0 / L
        x, g, f_val = x_new, g_new, f_new
        history.append(f_val)
    return run.result(x, f_val, k, converged, status)


SOLVERS = {
    "zero-sr1": run_zero_sr1,
    "zero-bfgs": run_zero_bfgs,
    "ista": run_ista,
    "fista-bb": run_fista_bb,
    "spg": run_spg_sparsa,
}


def solve(problem, solver_id, opts=None):
    """Dispatch by solver id; raises KeyError for unknown ids."""
    if solver_id not in SOLVERS:
        raise KeyError(f"unknown solver {solver_id!r}; "
                       f"known: {sorted(SOLVERS)}")
    return SOLVERS[solver_id](problem, opts)
