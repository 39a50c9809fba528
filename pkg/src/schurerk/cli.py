"""Command-line harness: convergence sweeps, benchmarks, adaptive runs and
stiffness reports, all written as CSV.

Exit codes: 0 success, 2 usage or unknown names, 3 numerical failure (the
rows computed so far are still written).
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import matlib
from .integrate import IntegrationError, StepControl, integrate_adaptive, integrate_fixed
from .problems import REGISTRY, get_problem
from .stiffness import DEFAULT_THRESHOLD, fixed_curve_probe, stiffness_report
from .tableaux import METHODS

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    """Bad flags or unknown names; maps to exit code 2."""


@dataclass
class RunConfig:
    subcommand: str
    problem: str
    grid: int | None = None
    methods: list = field(default_factory=list)
    formulations: list = field(default_factory=list)
    hs: list = field(default_factory=list)
    rtol: float = 1e-6
    atol: float = 1e-6
    t_end: float | None = None
    out: str | None = None
    seed: int = 0
    extra: dict = field(default_factory=dict)


def fmt(x) -> str:
    """Round-trip decimal text for CSV cells."""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def resolve_method(token: str, formulations: list) -> list:
    """``(tableau name, formulation)`` pairs for one ``--method`` token.

    A trailing ``M`` or ``V`` selects the formulation (``ERK4HO5V``);
    otherwise every requested formulation is used.
    """
    key = token.upper()
    if key in METHODS:
        return [(key, f) for f in formulations]
    if key[:-1] in METHODS and key[-1] in "MV":
        return [(key[:-1], "matrix" if key[-1] == "M" else "vector")]
    raise UsageError(f"unknown method {token!r}; known: {', '.join(METHODS)} "
                     "(optionally suffixed M or V)")


def h_sweep(args) -> list:
    if args.h:
        hs = list(args.h)
    else:
        if args.h_max is None or args.h_min is None:
            raise UsageError("give --h or both --h-min and --h-max")
        if not 0 < args.h_min <= args.h_max:
            raise UsageError("need 0 < h-min <= h-max")
        steps = args.h_steps
        if steps is None:
            steps = int(round(math.log2(args.h_max / args.h_min))) + 1
        if steps < 1:
            raise UsageError("empty h-sweep")
        if steps == 1:
            hs = [args.h_max]
        else:
            ratio = args.h_min / args.h_max
            hs = [args.h_max * ratio ** (k / (steps - 1)) for k in range(steps)]
    if not hs:
        raise UsageError("empty h-sweep")
    if any(not (h > 0 and math.isfinite(h)) for h in hs):
        raise UsageError("step sizes must be positive")
    return sorted(set(hs), reverse=True)


def build_config(args) -> RunConfig:
    if args.problem not in REGISTRY:
        raise UsageError(f"unknown problem {args.problem!r}; known: {', '.join(REGISTRY)}")
    forms = args.formulation or ["matrix"]
    cfg = RunConfig(subcommand=args.command, problem=args.problem, grid=args.grid,
                    formulations=forms, t_end=args.tend, out=args.out, seed=args.seed)
    if args.command in ("converge", "bench", "adaptive"):
        tokens = args.method or (["ERK43ZB"] if args.command != "converge" else [])
        if not tokens:
            raise UsageError("converge needs at least one --method")
        pairs = []
        for tok in tokens:
            for tok_part in tok.split(","):
                pairs.extend(resolve_method(tok_part.strip(), forms))
        cfg.methods = pairs
    if args.command in ("converge", "bench"):
        cfg.hs = h_sweep(args)
    if args.command == "adaptive":
        if args.rtol <= 0 or args.atol <= 0:
            raise UsageError("tolerances must be positive")
        cfg.rtol, cfg.atol = args.rtol, args.atol
    return cfg


def load_problem(cfg: RunConfig):
    try:
        prob = get_problem(cfg.problem, cfg.grid)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if cfg.t_end is not None:
        if cfg.t_end <= prob.t0:
            raise UsageError("--tend must exceed the start time")
        prob = prob.with_span(t_end=cfg.t_end)
    return prob


def cmd_converge(cfg: RunConfig):
    prob = load_problem(cfg)
    if prob.exact is None:
        raise UsageError(f"{cfg.problem} has no exact solution")
    exact = prob.exact(prob.t_end)
    header = ["method", "formulation", "h", "err_l2", "err_max", "observed_order", "wall_ms"]
    rows, failed = [], False
    for name, form in sorted(set(cfg.methods)):
        prev = None
        for h in cfg.hs:
            start = time.perf_counter()
            try:
                res = integrate_fixed(prob, name, h, form, keep="final")
                diff = res.y_final - exact
                e2 = float(np.linalg.norm(diff))
                emax = float(np.max(np.abs(diff)))
            except IntegrationError:
                e2 = emax = math.inf
                failed = True
            except ValueError as exc:
                raise UsageError(str(exc)) from exc
            if not (math.isfinite(e2) and math.isfinite(emax)):
                e2 = emax = math.inf
                failed = True
            wall = 1e3 * (time.perf_counter() - start)
            order = math.nan
            if prev is not None and 0 < e2 < math.inf and 0 < prev[1] < math.inf:
                order = math.log(prev[1] / e2) / math.log(prev[0] / h)
            rows.append([name, form, h, e2, emax, order, wall])
            prev = (h, e2)
    return header, rows, failed


def cmd_bench(cfg: RunConfig):
    prob = load_problem(cfg)
    if len(cfg.hs) != 1:
        raise UsageError("bench takes a single --h")
    if len({m for m, _ in cfg.methods}) != 1:
        raise UsageError("bench takes a single --method")
    h = cfg.hs[0]
    name = cfg.methods[0][0]
    # load or compile the QR kernel outside the timed region
    matlib.schur_decompose(np.array([[1.0, 2.0], [3.0, 4.0]]))
    header = ["formulation", "n", "steps", "schur_ms", "weights_ms", "stepping_ms", "total_ms",
              "speedup_vs_matrix"]
    measured, failed = {}, False
    for form in ("matrix", "vector"):
        try:
            res = integrate_fixed(prob, name, h, form, keep="final")
            st = res.stats
            parts = (1e3 * st.schur_time, 1e3 * st.weights_time, 1e3 * st.stepping_time)
            steps = st.steps_accepted
        except IntegrationError as exc:
            failed = True
            st = exc.result.stats if exc.result is not None else None
            parts = (math.inf, math.inf, math.inf)
            steps = st.steps_accepted if st else 0
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        measured[form] = (steps, parts, sum(parts))
    base = measured["matrix"][2]
    rows = []
    for form in ("matrix", "vector"):
        steps, (s_ms, w_ms, st_ms), total = measured[form]
        speed = base / total if total > 0 and math.isfinite(total) else math.nan
        rows.append([form, prob.n, steps, s_ms, w_ms, st_ms, total, speed])
    return header, rows, failed


def cmd_adaptive(cfg: RunConfig):
    prob = load_problem(cfg)
    if len(cfg.methods) != 1:
        raise UsageError("adaptive takes a single method and formulation")
    name, form = cfg.methods[0]
    control = StepControl(rtol=cfg.rtol, atol=cfg.atol)
    header = ["row", "t", "h", "err_norm", "accepted", "weight_refresh", "final_error"]
    failed = False
    try:
        res = integrate_adaptive(prob, name, control, formulation=form, keep="final",
                                 record_steps=True)
    except IntegrationError as exc:
        if exc.result is None:
            raise
        res, failed = exc.result, True
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rows = [["step", s.t, s.h, s.err_norm, s.accepted, s.weight_refresh, ""] for s in res.steps]
    final_err = ""
    if prob.exact is not None and not failed:
        final_err = float(np.max(np.abs(res.y_final - prob.exact(res.t[-1]))))
    accepted_errs = [s.err_norm for s in res.steps if s.accepted]
    last_h = next((s.h for s in reversed(res.steps) if s.accepted), math.nan)
    rows.append(["total", float(res.t[-1]), last_h, max(accepted_errs, default=math.nan),
                 res.stats.steps_accepted, res.stats.weight_refresh_count, final_err])
    return header, rows, failed


def cmd_stiffness(cfg: RunConfig):
    prob = load_problem(cfg)
    ex = cfg.extra
    header = ["t_window", "gamma_min", "gamma_max", "kappa", "r_nl", "stiffness_ratio", "stiff"]
    try:
        rep = stiffness_report(prob, windows=ex["windows"], tau=ex["tau"],
                               substeps=ex["substeps"], threshold=ex["threshold"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rows = []
    for win, kap, r, flag in zip(rep.windows, rep.kappa, rep.r_nl, rep.stiff):
        rows.append([win.t, float(win.gamma[-1]), float(win.gamma[0]), float(kap), float(r),
                     rep.ratio, bool(flag)])
    return header, rows, False


def cmd_probe(cfg: RunConfig):
    prob = load_problem(cfg)
    ex = cfg.extra
    try:
        rep = fixed_curve_probe(prob, ex["component"], ex["y_fixed"], ex["epsilon"],
                                fixed_index=ex["fixed_index"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    header = ["component", "y_fixed", "y1", "y2", "epsilon", "angle_plus", "angle_minus",
              "angle_spread"]
    rows = [[rep.component, rep.y_fixed, float(p[0]), float(p[1]), rep.epsilon, *ang]
            for p, ang in zip(rep.points, rep.angles)]
    return header, rows, False


COMMANDS = {
    "converge": cmd_converge,
    "bench": cmd_bench,
    "adaptive": cmd_adaptive,
    "stiffness": cmd_stiffness,
    "probe": cmd_probe,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="schurerk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--problem", required=True, help="registered problem name")
        p.add_argument("--grid", type=int, help="interior grid points N (PDE problems)")
        p.add_argument("--tend", type=float, help="final time (defaults to the problem's)")
        p.add_argument("--out", help="CSV output file (default: stdout)")
        p.add_argument("--seed", type=int, default=0,
                       help="recorded for reproducibility; all runs are deterministic")
        p.add_argument("--formulation", action="append", choices=["matrix", "vector"])

    def steps(p):
        p.add_argument("--method", action="append", help="method name, repeatable or comma list")
        p.add_argument("--h", type=float, action="append", help="step size (repeatable)")
        p.add_argument("--h-min", type=float)
        p.add_argument("--h-max", type=float)
        p.add_argument("--h-steps", type=int, help="number of sweep values (default: halvings)")

    p = sub.add_parser("converge", help="fixed-step error sweep against the exact solution")
    common(p)
    steps(p)
    p = sub.add_parser("bench", help="matrix vs vector formulation timing")
    common(p)
    steps(p)
    p = sub.add_parser("adaptive", help="embedded-error adaptive run, one row per step")
    common(p)
    p.add_argument("--method", action="append")
    p.add_argument("--rtol", type=float, default=1e-6)
    p.add_argument("--atol", type=float, default=1e-6)
    p = sub.add_parser("stiffness", help="stiffness ratio, Lyapunov windows and R_nl")
    common(p)
    p.add_argument("--windows", type=int, default=5)
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--substeps", type=int, default=50)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p = sub.add_parser("probe", help="slope-field alignment across a fixed curve")
    common(p)
    p.add_argument("--component", type=int, choices=[1, 2], required=True)
    p.add_argument("--y-fixed", type=float, required=True)
    p.add_argument("--fixed-index", type=int, choices=[1, 2], default=1)
    p.add_argument("--epsilon", type=float, default=1e-3)
    return parser


def write_csv(header, rows, out):
    handle = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.writer(handle, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])
    finally:
        if out:
            handle.close()


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = build_config(args)
        if args.command == "stiffness":
            cfg.extra = {"windows": args.windows, "tau": args.tau, "substeps": args.substeps,
                         "threshold": args.threshold}
        elif args.command == "probe":
            cfg.extra = {"component": args.component, "y_fixed": args.y_fixed,
                         "fixed_index": args.fixed_index, "epsilon": args.epsilon}
        header, rows, failed = COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"schurerk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    write_csv(header, rows, cfg.out)
    if failed:
        print("schurerk: numerical failure; partial results written", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
