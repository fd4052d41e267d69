"""Command-line front end: solve single problems, run races, validate the
invariant suites, and evaluate scaled proxes from plain-text files.

Exit codes: 0 success, 1 validation-suite failure, 2 configuration or
parse error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .bench import (
    ProblemRecipe,
    desk_recipes,
    generate,
    race,
    reference_solution,
    write_gnuplot_script,
    write_manifest,
    write_trace_csv,
)
from .metric import LowRankMetric, MetricError
from .prox import (
    Box,
    GroupL2,
    Hinge,
    L1Ball,
    L1Norm,
    LinfBall,
    LinfNorm,
    MaxFunction,
    NonNeg,
    Simplex,
    Zero,
)
from .scaled import scaled_prox
from .solver import SOLVERS, SolverOptions
from .validate import SUITES, run_suites

CONFIG_ERROR, SOLVER_ERROR = 2, 3


def _recipe_from_args(args):
    kwargs = dict(family=args.family, lam=args.lam, seed=args.seed)
    if args.family == "lasso_diff3d":
        kwargs["side"] = args.side or 7
    else:
        kwargs["m"] = args.m or 150
        kwargs["n"] = args.n or 300
    if args.family == "group_lasso":
        kwargs["block_cap"] = args.block_cap
    return ProblemRecipe(**kwargs)


def cmd_solve(args):
    if args.solver not in SOLVERS:
        print(f"error: unknown solver {args.solver!r}; known: "
              f"{', '.join(sorted(SOLVERS))}", file=sys.stderr)
        return CONFIG_ERROR
    try:
        recipe = _recipe_from_args(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return CONFIG_ERROR
    problem = generate(recipe)
    ref = reference_solution(problem, cache_dir=args.cache_dir)
    opts = SolverOptions(max_iters=args.max_iters, tol=args.tol,
                         budget_seconds=args.budget_s, f_star=ref.f_star,
                         line_search=args.line_search)
    try:
        result = SOLVERS[args.solver](problem, opts)
    except Exception as exc:  # noqa: BLE001 - reported as exit code 3
        print(f"solver failure: {exc}", file=sys.stderr)
        return SOLVER_ERROR
    out = args.out or f"{recipe.label()}_{args.solver}.csv"
    write_trace_csv(result.trace, out, timed=args.timed)
    err = result.objective - ref.f_star
    print(f"solver={args.solver} problem={recipe.label()} "
          f"final_error={err:.6e} iterations={result.iterations} "
          f"seconds={result.trace.seconds[-1]:.3f} status={result.status} "
          f"trace={out}")
    return 0 if result.status in ("converged", "max_iters") else SOLVER_ERROR


def cmd_race(args):
    solver_ids = [s.strip() for s in args.solvers.split(",") if s.strip()]
    for sid in solver_ids:
        if sid not in SOLVERS:
            print(f"error: unknown solver {sid!r}", file=sys.stderr)
            return CONFIG_ERROR
    if args.paper_scale:
        recipes = [
            ProblemRecipe("lasso_gaussian", m=1500, n=3000, lam=0.1,
                          seed=args.seed),
            ProblemRecipe("lasso_diff3d", side=15, lam=1.0, seed=args.seed),
            ProblemRecipe("group_lasso", m=1600, n=2500, lam=1.0,
                          block_cap=12, seed=args.seed),
        ]
    else:
        recipes = desk_recipes(args.seed)
    if args.families:
        wanted = {f.strip() for f in args.families.split(",")}
        unknown = wanted - {r.family for r in recipes}
        if unknown:
            print(f"error: unknown families {sorted(unknown)}",
                  file=sys.stderr)
            return CONFIG_ERROR
        recipes = [r for r in recipes if r.family in wanted]
    problems = [generate(r) for r in recipes]
    entries = race(problems, solver_ids, max_iters=args.max_iters,
                   budget_seconds=args.budget_s, tol=args.tol,
                   jobs=args.jobs, cache_dir=args.cache_dir)
    os.makedirs(args.out_dir, exist_ok=True)
    csv_paths = []
    failed = False
    for entry in entries:
        if entry.error is not None:
            failed = True
            print(f"{entry.solver_id} on {entry.problem_id}: "
                  f"FAILED ({entry.error})")
            continue
        path = os.path.join(args.out_dir,
                            f"{entry.problem_id}_{entry.solver_id}.csv")
        write_trace_csv(entry.trace, path)
        csv_paths.append(path)
        err = entry.trace.objective_errors()[-1]
        print(f"{entry.solver_id} on {entry.problem_id}: "
              f"error={err:.3e} iters={entry.result.iterations} "
              f"seconds={entry.trace.seconds[-1]:.2f}")
    write_manifest(os.path.join(args.out_dir, "manifest.json"), entries,
                   problems, {"solvers": solver_ids, "tol": args.tol,
                              "max_iters": args.max_iters,
                              "budget_s": args.budget_s, "seed": args.seed})
    if args.gnuplot:
        write_gnuplot_script(os.path.join(args.out_dir, "plot.gp"), csv_paths)
    return SOLVER_ERROR if failed else 0


def cmd_validate(args):
    names = [args.suite] if args.suite else None
    overrides = {}
    if args.n is not None:
        overrides["max_n"] = args.n
        overrides["n"] = args.n
    if args.count is not None:
        overrides["count"] = args.count
    try:
        results = run_suites(names, seed=args.seed, **overrides)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return CONFIG_ERROR
    for res in results:
        print(res.line())
        sys.stdout.flush()
    return 0 if all(r.passed for r in results) else 1


# -- prox file format ------------------------------------------------------------

_PROX_HELP = """\
Plain-text scaled-prox input: one value per line, '#'-prefixed metadata.

  # h: l1            function id (l1, nonneg, box, hinge, linf_ball,
  #                  l1_ball, simplex, linf_norm, max, group_l1l2, zero)
  # lam: 1.0         function weight (or radius / lo+hi for balls/boxes)
  # sign: +          sign of the rank-1 metric term
  # kappa: 1.0       prox scale
  # blocks: 2,2      group sizes (group_l1l2 only)
  # vector: x        the following lines hold x; likewise d and u
"""


def _parse_prox_file(path):
    meta, vectors = {}, {}
    current = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("#").strip()
                if ":" in body:
                    key, value = body.split(":", 1)
                    key, value = key.strip().lower(), value.strip()
                    if key == "vector":
                        current = value
                        vectors[current] = []
                    else:
                        meta[key] = value
                continue
            if current is None:
                raise ValueError(f"line {lineno}: value outside any vector")
            vectors[current].append(float(line))
    return meta, {k: np.asarray(v, dtype=float) for k, v in vectors.items()}


def _operator_from_meta(meta, n):
    h = meta.get("h", "l1").lower()
    lam = float(meta.get("lam", 1.0))
    if h == "l1":
        return L1Norm(lam)
    if h == "nonneg":
        return NonNeg()
    if h == "box":
        return Box(float(meta.get("lo", -1.0)), float(meta.get("hi", 1.0)))
    if h == "hinge":
        return Hinge(lam)
    if h == "linf_ball":
        return LinfBall(float(meta.get("radius", 1.0)))
    if h == "l1_ball":
        return L1Ball(float(meta.get("radius", 1.0)))
    if h == "simplex":
        return Simplex(float(meta.get("radius", 1.0)))
    if h == "linf_norm":
        return LinfNorm(lam)
    if h == "max":
        return MaxFunction(lam)
    if h == "zero":
        return Zero()
    if h == "group_l1l2":
        sizes = [int(s) for s in meta.get("blocks", "").split(",") if s]
        if sum(sizes) != n:
            raise ValueError("group sizes must sum to the dimension")
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        blocks = [np.arange(s, s + size) for s, size in zip(starts, sizes)]
        return GroupL2(lam, blocks)
    raise ValueError(f"unknown function id {h!r}")


def cmd_prox(args):
    try:
        meta, vectors = _parse_prox_file(args.input)
        if "x" not in vectors or "d" not in vectors:
            raise ValueError("input must define vectors x and d")
        x, d = vectors["x"], vectors["d"]
        if x.shape != d.shape:
            raise ValueError("x and d must have equal length")
        factors = [vectors["u"]] if "u" in vectors and \
            np.any(vectors["u"] != 0) else []
        sign = +1 if meta.get("sign", "+").strip() in ("+", "+1", "1") else -1
        metric = LowRankMetric(d, factors, sign)
        op = _operator_from_meta(meta, x.shape[0])
        kappa = float(meta.get("kappa", 1.0))
    except (ValueError, MetricError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return CONFIG_ERROR
    try:
        p, report = scaled_prox(metric, op, x, kappa=kappa,
                                finder=args.finder, tol=args.tol)
    except Exception as exc:  # noqa: BLE001
        print(f"solver failure: {exc}", file=sys.stderr)
        return SOLVER_ERROR
    for value in p:
        print(f"{value:.17g}")
    alpha = ",".join(f"{a:.17g}" for a in report.alpha_star)
    print(f"alpha_star={alpha or 'nan'} residual={report.residual:.3e} "
          f"method={report.method} iterations={report.iterations}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="proxqn",
        description="Proximal quasi-Newton solvers and benchmark harness")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="solve one benchmark problem")
    ps.add_argument("--family", default="lasso_gaussian",
                    choices=["lasso_gaussian", "lasso_diff3d", "group_lasso",
                             "nnls"])
    ps.add_argument("--m", type=int)
    ps.add_argument("--n", type=int)
    ps.add_argument("--side", type=int)
    ps.add_argument("--lambda", dest="lam", type=float, default=0.1)
    ps.add_argument("--block-cap", type=int, default=12)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--solver", default="zero-sr1")
    ps.add_argument("--tol", type=float, default=1e-8)
    ps.add_argument("--max-iters", type=int, default=200_000)
    ps.add_argument("--budget-s", type=float)
    ps.add_argument("--line-search", default="backtracking",
                    choices=["backtracking", "none"])
    ps.add_argument("--out")
    ps.add_argument("--cache-dir")
    ps.add_argument("--timed", action="store_true",
                    help="record wall-clock times in the trace (off by "
                         "default so repeated runs are byte-identical)")
    ps.set_defaults(func=cmd_solve)

    pr = sub.add_parser("race", help="race solvers over problem families")
    pr.add_argument("--solvers",
                    default="zero-sr1,zero-bfgs,ista,fista-bb,spg")
    pr.add_argument("--families", help="comma-separated subset")
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--tol", type=float, default=1e-9)
    pr.add_argument("--max-iters", type=int, default=400_000)
    pr.add_argument("--budget-s", type=float, default=120.0)
    pr.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    pr.add_argument("--out-dir", default="races")
    pr.add_argument("--cache-dir")
    pr.add_argument("--paper-scale", action="store_true",
                    help="use the original experiment dimensions")
    pr.add_argument("--gnuplot", action="store_true",
                    help="emit a gnuplot script referencing the CSVs")
    pr.set_defaults(func=cmd_race)

    pv = sub.add_parser("validate", help="run invariant suites")
    pv.add_argument("--suite", choices=sorted(SUITES))
    pv.add_argument("--seed", type=int, default=0)
    pv.add_argument("--n", type=int, help="instance dimension cap")
    pv.add_argument("--count", type=int, help="instances per suite")
    pv.set_defaults(func=cmd_validate)

    pp = sub.add_parser("prox", help="evaluate a scaled prox from a file",
                        epilog=_PROX_HELP,
                        formatter_class=argparse.RawDescriptionHelpFormatter)
    pp.add_argument("--input", required=True)
    pp.add_argument("--finder", default="auto",
                    choices=["auto", "exact", "bisection", "ssnewton",
                             "closed_form", "group"])
    pp.add_argument("--tol", type=float, default=1e-12)
    pp.set_defaults(func=cmd_prox)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
