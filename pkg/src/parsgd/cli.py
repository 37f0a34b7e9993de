"""Command-line front end: ``parsgd {train,sweep,gridsearch,simulate,report}``.

Exit status is 0 on success, 2 when the run did not reach the requested
tolerance, and 1 for usage or data errors.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import fixtures, harness, simd_sim
from .async_engine import AccessPath, ExecutionPlan, PlanError, Replication
from .dataset import DatasetError, Layout, convert_layout, load
from .glm import DivergenceError, Hyperparams
from .harness import Engine, RunConfig

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2

FIXTURES = {
    "dense": fixtures.dense_fixture,
    "sparse": fixtures.sparse_fixture,
    "separable": fixtures.separable_fixture,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value file; flags override it")
    p.add_argument("--task", choices=["lr", "svm"], default="lr")
    p.add_argument("--data", help="LIBSVM file, .npz cache, or fixture:{dense,sparse,separable}")
    p.add_argument("--layout", choices=[l.value for l in Layout])
    p.add_argument("--engine", choices=[e.value for e in Engine], default="sync")
    p.add_argument("--plan", action="append",
                   help="<access>:<replication>:<k>; repeat for sweeps")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--group-size", type=int, default=32)
    p.add_argument("--warp-width", type=int, default=32)
    p.add_argument("--segment-size", type=int, default=8)
    p.add_argument("--offsets", action="store_true", help="circular update offsets")
    step = p.add_mutually_exclusive_group()
    step.add_argument("--alpha", type=float)
    step.add_argument("--grid", action="store_true", help="step sizes 1e-6 .. 1e2")
    p.add_argument("--batch", type=int, help="mini-batch size (sync engine; default N)")
    p.add_argument("--decay", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--tol", type=int, choices=[10, 5, 2, 1], default=1,
                   help="convergence threshold in percent of the optimal loss")
    p.add_argument("--optimal-loss", type=float,
                   help="known optimal loss (default: estimated)")
    p.add_argument("--budget", type=float, default=60.0,
                   help="wall-clock seconds per run and per optimal-loss config")
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--skip-warmup", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output file")
    p.add_argument("--format", choices=["csv", "json", "plot"], default="json")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="parsgd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in [("train", "run one configuration"),
                       ("sweep", "run several plans and compare"),
                       ("gridsearch", "pick the step size by time to convergence"),
                       ("simulate", "warp simulator sweep over plans"),
                       ("report", "re-export or summarize saved JSON reports")]:
        p = sub.add_parser(name, help=text)
        if name == "report":
            p.add_argument("reports", nargs="+", help="JSON files from --format json")
            p.add_argument("--tol", type=int, choices=[10, 5, 2, 1], default=1)
            p.add_argument("--out")
            p.add_argument("--format", choices=["csv", "json", "plot"])
        else:
            _common(p)
    return parser


def read_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; keys use flag spelling."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def _parse(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        try:
            values = read_config_file(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config file: {exc}") from None
        defaults = {}
        for key, raw in values.items():
            action = known.get(key)
            if action is None or key in ("config", "help"):
                raise UsageError(f"unknown config key {key!r}")
            if isinstance(action, argparse._StoreTrueAction):
                defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            elif isinstance(action, argparse._AppendAction):
                defaults[key] = [s.strip() for s in raw.split(",") if s.strip()]
            else:
                try:
                    val = action.type(raw) if action.type else raw
                except ValueError:
                    raise UsageError(f"bad value for {key}: {raw!r}") from None
                if action.choices and val not in action.choices:
                    raise UsageError(f"bad value for {key}: {raw!r}")
                defaults[key] = val
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _dataset(args):
    if not args.data:
        raise UsageError("--data is required")
    if args.data.startswith("fixture:"):
        name = args.data.split(":", 1)[1]
        if name not in FIXTURES:
            raise UsageError(f"unknown fixture {name!r}; have {sorted(FIXTURES)}")
        ds = FIXTURES[name](seed=args.seed)
        return ds if args.layout is None else convert_layout(ds, args.layout)
    return load(args.data, args.layout)


def _plans(args) -> list[ExecutionPlan]:
    texts = args.plan or ["row-ch:kernel:0"]
    opts = dict(workers=args.workers, group_size=args.group_size,
                circular_offsets=args.offsets)
    return [ExecutionPlan.parse(t, **opts) for t in texts]


def _warp(args) -> simd_sim.WarpConfig:
    return simd_sim.WarpConfig(args.warp_width, args.segment_size,
                               offsets_enabled=args.offsets)


def _config(args, plan=None) -> RunConfig:
    alpha = args.alpha if args.alpha is not None else 0.1
    return RunConfig(engine=args.engine, task=args.task,
                     hyper=Hyperparams(alpha, args.epochs, args.task, args.batch, args.decay),
                     data=args.data, layout=args.layout, plan=plan, warp=_warp(args),
                     workers=args.workers, repetitions=args.repetitions,
                     wall_clock_budget_seconds=args.budget, seed=args.seed,
                     skip_warmup=args.skip_warmup, optimal_loss=args.optimal_loss)


def _optimal(args, ds) -> float:
    if args.optimal_loss is not None:
        return args.optimal_loss
    return harness.estimate_optimal_loss(args.task, ds, args.budget)


def _summary(r: harness.RunReport, tol_pct: int) -> str:
    key = f"{tol_pct}%"
    e = r.epochs_to.get(key)
    t = r.time_to_convergence.get(key)
    reach = "not reached" if e is None else f"epoch {e}, {t:.6g} {r.time_unit}"
    per = r.time_per_epoch_ms if r.time_unit == "s" else r.time_per_epoch_ms / 1000.0
    unit = "ms" if r.time_unit == "s" else r.time_unit
    return (f"{r.label}: final loss {r.final_loss:.6g} (L* {r.optimal_loss_used:.6g}), "
            f"{per:.4g} {unit}/epoch, {tol_pct}%: {reach}")


def _emit(reports, args) -> None:
    for r in reports:
        print(_summary(r, args.tol))
    if args.out:
        for p in harness.export(reports, args.format or "json", args.out):
            print(f"wrote {p}")


def _all_converged(reports, tol_pct) -> bool:
    return all(r.epochs_to.get(f"{tol_pct}%") is not None for r in reports)


def cmd_train(args) -> int:
    ds = _dataset(args)
    if args.grid:
        raise UsageError("train takes --alpha; use gridsearch for --grid")
    plan = _plans(args)[0] if args.engine != "sync" else None
    cfg = replace(_config(args, plan), optimal_loss=_optimal(args, ds))
    report = harness.run(cfg, ds)
    _emit([report], args)
    return EXIT_OK if _all_converged([report], args.tol) else EXIT_NOT_CONVERGED


def cmd_sweep(args) -> int:
    ds = _dataset(args)
    L = _optimal(args, ds)
    if args.engine == "sync":
        raise UsageError("sweep compares plans; pick --engine async, numa or warpsim")
    if args.plan:
        plans = _plans(args)
    else:
        plans = [ExecutionPlan(p, Replication.KERNEL, 0, args.workers, args.group_size,
                               args.offsets) for p in AccessPath]
    reports = []
    for plan in plans:
        prepared = plan.layout_for(ds)
        cfg = replace(_config(args, plan), optimal_loss=L, layout=None)
        reports.append(harness.run(cfg, convert_layout(ds, prepared)))
    _emit(reports, args)
    return EXIT_OK if _all_converged(reports, args.tol) else EXIT_NOT_CONVERGED


def cmd_gridsearch(args) -> int:
    ds = _dataset(args)
    plan = _plans(args)[0] if args.engine != "sync" else None
    cfg = replace(_config(args, plan), optimal_loss=_optimal(args, ds))
    grid = harness.DEFAULT_GRID if args.grid or args.alpha is None else [args.alpha]
    result = harness.grid_search_alpha(cfg, grid, ds)
    reports = [result.reports[a] for a in sorted(result.reports)]
    _emit(reports, args)
    flag = "" if result.converged else " (nothing converged; lowest final loss)"
    print(f"selected alpha = {result.alpha:g}{flag}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_simulate(args) -> int:
    ds = _dataset(args)
    texts = args.plan or [f"{p.value}:kernel:0" for p in AccessPath]
    workers = args.workers if args.workers > 1 else args.warp_width
    plans = [ExecutionPlan.parse(t, workers=workers, group_size=args.group_size,
                                 circular_offsets=args.offsets) for t in texts]
    rows = simd_sim.sweep_plans(args.task, ds, plans, _warp(args), args.epochs,
                                args.alpha if args.alpha is not None else 0.1,
                                args.tol / 100.0, args.seed, args.optimal_loss)
    print(f"{'plan':32} {'transactions/epoch':>20} {'survivors':>10} "
          f"{'time/epoch':>12} {'epochs-to':>9}")
    for r in rows:
        e = "-" if r.epochs_to_tolerance is None else str(r.epochs_to_tolerance)
        print(f"{r.plan:32} {r.transactions_per_epoch:20.1f} {r.survivor_fraction:10.4f} "
              f"{r.simulated_time_per_epoch:12.1f} {e:>9}")
    if args.out:
        cols = ("plan", "transactions_per_epoch", "survivor_fraction",
                "simulated_time_per_epoch", "epochs_to_tolerance", "final_loss")
        lines = [",".join(cols)]
        for r in rows:
            lines.append(",".join(harness._csv_value(getattr(r, c)) for c in cols))
        Path(args.out).write_text("\n".join(lines) + "\n")
        print(f"wrote {args.out}")
    return EXIT_OK if all(r.epochs_to_tolerance is not None for r in rows) \
        else EXIT_NOT_CONVERGED


def cmd_report(args) -> int:
    reports = []
    for path in args.reports:
        try:
            reports.extend(harness.load_reports(path))
        except (ValueError, TypeError, KeyError) as exc:
            raise UsageError(f"{path}: not a report file ({exc})") from None
    _emit(reports, args)
    return EXIT_OK if _all_converged(reports, args.tol) else EXIT_NOT_CONVERGED


COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "gridsearch": cmd_gridsearch,
            "simulate": cmd_simulate, "report": cmd_report}


def main(argv=None) -> int:
    try:
        args = _parse(argv)
        return COMMANDS[args.command](args)
    except SystemExit as exc:  # argparse: --help or a usage error
        return exc.code if isinstance(exc.code, int) else EXIT_ERROR
    except (UsageError, DatasetError, PlanError, OSError, ValueError) as exc:
        print(f"parsgd: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except DivergenceError as exc:
        print(f"parsgd: diverged: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())
