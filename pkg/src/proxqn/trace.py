"""Per-iteration convergence records."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["ConvergenceTrace"]


@dataclass
class ConvergenceTrace:
    """One record per iteration: objective, prox-step norm, elapsed time.

    Objective errors require a reference value ``f_star``; the harness
    attaches it before persisting.
    """

    solver_id: str = ""
    problem_id: str = ""
    f_star: float | None = None
    iters: list = field(default_factory=list)
    objectives: list = field(default_factory=list)
    step_norms: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def append(self, k, objective, step_norm, elapsed):
        if self.iters and k <= self.iters[-1]:
            raise ValueError("iteration numbers must be strictly increasing")
        if self.seconds and elapsed < self.seconds[-1]:
            raise ValueError("elapsed times must be non-decreasing")
        self.iters.append(int(k))
        self.objectives.append(float(objective))
        self.step_norms.append(float(step_norm))
        self.seconds.append(float(elapsed))

    def __len__(self):
        return len(self.iters)

    def objective_errors(self):
        if self.f_star is None:
            raise ValueError("trace has no reference objective attached")
        return np.asarray(self.objectives) - self.f_star

    def iterations_to_error(self, threshold):
        """First recorded iteration whose objective error is <= threshold,
        or None if never reached."""
        errs = self.objective_errors()
        hit = np.nonzero(errs <= threshold)[0]
        return int(self.iters[hit[0]]) if hit.size else None
