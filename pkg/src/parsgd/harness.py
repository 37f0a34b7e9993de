"""Experiment driver: step-size grid search, optimal-loss estimates,
convergence thresholds, timed repetitions, and report export.

Timing covers only the engines' epoch bodies. Data loading, loss evaluation
and export happen outside the clock, which is injectable for testing.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import async_engine, linalg, simd_sim, sync_engine
from ._backend import BACKEND
from .async_engine import ExecutionPlan
from .dataset import Dataset, Layout, convert_layout, load
from .glm import DivergenceError, Hyperparams, LossTrace, Task, convergence_epochs
from .simd_sim import WarpConfig


TOLERANCES = (0.10, 0.05, 0.02, 0.01)
DEFAULT_GRID = tuple(10.0 ** e for e in range(-6, 3))

CSV_HEADER = ("label", "engine", "task", "plan", "alpha", "tolerance", "epochs_to",
              "time_to_convergence", "time_per_epoch_ms", "optimal_loss", "final_loss",
              "time_unit")


class Engine(str, enum.Enum):
    SYNC = "sync"
    ASYNC = "async"
    NUMA = "numa"
    WARPSIM = "warpsim"


def tol_key(tol: float) -> str:
    return f"{tol * 100:g}%"


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to repeat one experiment.

    ``max_epochs`` overrides ``hyper.epochs`` when set. ``workers`` is the
    thread count for the synchronous engine; the other engines take theirs
    from ``plan``.
    """

    engine: Engine = Engine.SYNC
    task: Task = Task.LR
    hyper: Hyperparams = field(default_factory=lambda: Hyperparams(0.1, 10))
    data: str | None = None
    layout: Layout | None = None
    plan: ExecutionPlan | None = None
    warp: WarpConfig | None = None
    workers: int = 1
    repetitions: int = 3
    max_epochs: int | None = None
    wall_clock_budget_seconds: float = 60.0
    seed: int = 0
    skip_warmup: int = 0
    optimal_loss: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "engine", Engine(self.engine))
        object.__setattr__(self, "task", Task(self.task))
        if self.layout is not None:
            object.__setattr__(self, "layout", Layout(self.layout))
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.wall_clock_budget_seconds > 0:
            raise ValueError("wall-clock budget must be positive")
        if self.skip_warmup < 0:
            raise ValueError("skip_warmup must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def epochs(self) -> int:
        return self.hyper.epochs if self.max_epochs is None else self.max_epochs

    @property
    def label(self) -> str:
        parts = [self.engine.value, self.task.value, f"alpha={self.hyper.alpha:g}"]
        if self.engine is not Engine.SYNC:
            parts.append((self.plan or ExecutionPlan()).label)
        elif self.hyper.batch is not None:
            parts.append(f"batch={self.hyper.batch}")
        return " ".join(parts)

    def echo(self) -> dict:
        plan = self.plan or ExecutionPlan()
        out = {
            "engine": self.engine.value,
            "task": self.task.value,
            "data": self.data,
            "layout": self.layout.value if self.layout else None,
            "alpha": self.hyper.alpha,
            "batch": self.hyper.batch,
            "decay": self.hyper.decay,
            "epochs": self.epochs,
            "workers": self.workers,
            "repetitions": self.repetitions,
            "wall_clock_budget_seconds": self.wall_clock_budget_seconds,
            "seed": self.seed,
            "skip_warmup": self.skip_warmup,
        }
        if self.engine is not Engine.SYNC:
            out.update(plan=f"{plan.access_path.value}:{plan.replication.value}:{plan.k}",
                       plan_workers=plan.workers, group_size=plan.group_size,
                       circular_offsets=plan.circular_offsets,
                       merge_period_epochs=plan.merge_period_epochs)
        if self.engine is Engine.WARPSIM:
            out["warp"] = {k: (v.value if isinstance(v, enum.Enum) else v)
                           for k, v in asdict(self.warp or WarpConfig()).items()}
        return out


def environment() -> dict:
    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "platform": platform.platform(),
        "machine": platform.machine(),
        "cpus": os.cpu_count(),
        "backend": BACKEND,
    }


@dataclass
class RunReport:
    label: str
    config: dict
    environment: dict
    initial_loss: float
    losses: list
    epoch_times: list
    time_per_epoch_ms: float
    optimal_loss_used: float
    epochs_to: dict
    time_to_convergence: dict
    time_unit: str = "s"
    repetitions_completed: int = 0
    errors: list = field(default_factory=list)

    @property
    def loss_trace(self) -> list[tuple[int, float, float]]:
        """``(epoch, loss, cumulative time)`` rows, epochs counted from 1."""
        out, t = [], 0.0
        for e, (loss, dt) in enumerate(zip(self.losses, self.epoch_times), 1):
            t += dt
            out.append((e, loss, t))
        return out

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else self.initial_loss

    @property
    def converged(self) -> bool:
        return self.epochs_to.get(tol_key(0.01)) is not None

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "config": self.config,
            "environment": self.environment,
            "initial_loss": self.initial_loss,
            "losses": list(self.losses),
            "epoch_times": list(self.epoch_times),
            "time_per_epoch_ms": self.time_per_epoch_ms,
            "optimal_loss_used": self.optimal_loss_used,
            "epochs_to": dict(self.epochs_to),
            "time_to_convergence": dict(self.time_to_convergence),
            "time_unit": self.time_unit,
            "repetitions_completed": self.repetitions_completed,
            "errors": list(self.errors),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        return cls(**data)


def report_from_trace(trace: LossTrace, optimal_loss: float | None = None, label: str = "",
                      config: dict | None = None, skip_warmup: int = 0,
                      time_unit: str = "s", repetitions: int = 1, errors=()) -> RunReport:
    """Derive the convergence metrics of a single (or averaged) trace.

    Without ``optimal_loss`` the lowest loss in the trace is used.
    """
    losses = list(trace.losses)
    times = list(trace.epoch_times)
    if optimal_loss is None:
        optimal_loss = min(losses + [trace.initial_loss])
    kept = times[skip_warmup:]
    per_epoch = 1000.0 * sum(kept) / len(kept) if kept else math.nan
    cum = trace.cumulative_times
    epochs_to, ttc = {}, {}
    for tol in TOLERANCES:
        e = convergence_epochs(losses, optimal_loss, tol)
        epochs_to[tol_key(tol)] = e
        ttc[tol_key(tol)] = None if e is None else cum[e - 1]
    return RunReport(label, dict(config or {}), environment(), trace.initial_loss, losses,
                     times, per_epoch, float(optimal_loss), epochs_to, ttc, time_unit,
                     repetitions, list(errors))


class _Budget:
    """Stops a run once its timed epochs exceed ``seconds`` or ``epochs``.

    With ``clock`` set, elapsed time is read from it instead of the trace
    (the simulator's trace holds simulated time, not seconds).
    """

    def __init__(self, seconds: float, epochs: int, clock=None):
        self.seconds, self.epochs, self.clock = seconds, epochs, clock
        self.start = clock() if clock is not None else 0.0

    def __call__(self, trace: LossTrace) -> bool:
        if len(trace) >= self.epochs:
            return True
        if self.clock is not None:
            return self.clock() - self.start >= self.seconds
        return sum(trace.epoch_times) >= self.seconds


def _dataset(config: RunConfig, dataset: Dataset | None) -> Dataset:
    if dataset is None:
        if config.data is None:
            raise ValueError("no dataset given: set RunConfig.data or pass one in")
        dataset = load(config.data, config.layout)
    elif config.layout is not None and dataset.layout is not config.layout:
        dataset = convert_layout(dataset, config.layout)
    return dataset


def _run_once(config: RunConfig, ds: Dataset, clock, elapsed_budget: bool = False) -> LossTrace:
    hyper = replace(config.hyper, epochs=config.epochs, task=config.task)
    plan = config.plan or ExecutionPlan()
    wall = elapsed_budget or config.engine is Engine.WARPSIM
    stop = _Budget(config.wall_clock_budget_seconds, config.epochs, clock if wall else None)
    if config.engine is Engine.SYNC:
        _, trace = sync_engine.train(config.task, ds, hyper, config.seed, config.workers,
                                     clock=clock, should_stop=stop)
    elif config.engine is Engine.ASYNC:
        _, trace = async_engine.hogwild_train(config.task, plan.prepare(ds), hyper, plan,
                                              config.seed, clock=clock, should_stop=stop)
    elif config.engine is Engine.NUMA:
        _, trace = async_engine.numa_dual_train(config.task, plan.prepare(ds), hyper, plan,
                                                config.seed, clock=clock, should_stop=stop)
    else:
        _, _, trace = simd_sim.simulate(config.task, ds, hyper, plan, config.warp,
                                        config.seed, should_stop=stop)
    return trace


def _average(traces: list[LossTrace]) -> LossTrace:
    length = min(len(t) for t in traces)
    losses = [sum(t.losses[e] for t in traces) / len(traces) for e in range(length)]
    times = [sum(t.epoch_times[e] for t in traces) / len(traces) for e in range(length)]
    return LossTrace(traces[0].initial_loss, losses, times)


def run(config: RunConfig, dataset: Dataset | None = None, clock=time.perf_counter) -> RunReport:
    """Run ``config.repetitions`` times with the same seed and average.

    Losses and per-epoch times are averaged epoch by epoch over the completed
    repetitions. A diverging repetition is recorded in ``errors`` and the
    remaining ones still run.
    """
    if config.epochs < 1:
        raise ValueError("max_epochs must be >= 1: an empty run has no trace")
    ds = _dataset(config, dataset)
    traces, errors, partial = [], [], None
    for rep in range(config.repetitions):
        try:
            traces.append(_run_once(config, ds, clock))
        except DivergenceError as exc:
            errors.append(f"repetition {rep + 1}: {exc}")
            partial = exc.trace if exc.trace is not None else partial
    if not traces:
        if partial is None:
            raise DivergenceError("; ".join(errors))
        traces = [partial]
    done = config.repetitions - len(errors)
    unit = "steps" if config.engine is Engine.WARPSIM else "s"
    return report_from_trace(_average(traces), config.optimal_loss, config.label,
                             config.echo(), config.skip_warmup, unit, done, errors)


@dataclass
class GridResult:
    alpha: float
    converged: bool
    reports: dict  # alpha -> RunReport


def grid_search_alpha(config: RunConfig | None = None, grid=DEFAULT_GRID,
                      dataset: Dataset | None = None, runner=None,
                      clock=time.perf_counter) -> GridResult:
    """Pick the step size with the fastest time to the 1% threshold.

    ``runner(alpha) -> RunReport`` replaces the default, which runs ``config``
    with ``hyper.alpha`` swapped. Ties go to the smaller step. If no step
    converges, the one with the lowest final loss is returned with
    ``converged=False``.
    """
    grid = sorted(float(a) for a in grid)
    if not grid:
        raise ValueError("empty step-size grid")
    if runner is None:
        if config is None:
            raise ValueError("need a RunConfig or a runner")
        ds = _dataset(config, dataset)

        def runner(alpha):
            cfg = replace(config, hyper=replace(config.hyper, alpha=alpha))
            try:
                return run(cfg, ds, clock)
            except DivergenceError as exc:
                trace = LossTrace(math.inf, [math.inf], [0.0])
                return report_from_trace(trace, config.optimal_loss, cfg.label,
                                         cfg.echo(), errors=[str(exc)])

    reports = {a: runner(a) for a in grid}
    key = tol_key(0.01)
    timed = [(r.time_to_convergence[key], a) for a, r in reports.items()
             if r.time_to_convergence.get(key) is not None]
    if timed:
        best = min(timed)
        return GridResult(best[1], True, reports)

    def final(a):
        x = reports[a].final_loss
        return x if math.isfinite(x) else math.inf

    best = min(grid, key=lambda a: (final(a), a))
    return GridResult(best, False, reports)


_OPTIMAL_CACHE: dict = {}


def default_optimal_configs(task, ds: Dataset, budget: float = 60.0,
                            max_epochs: int = 100_000) -> list[RunConfig]:
    """Full-batch gradient descent at ``1/L`` and ``1.9/L``, where ``L`` bounds
    the curvature of the summed loss (``||X||_2^2 / 4`` for LR)."""
    task = Task(task)
    lam = spectral_norm_sq(ds)
    L = lam / 4.0 if task is Task.LR else lam
    L = L if L > 0 else 1.0
    return [RunConfig(Engine.SYNC, task, Hyperparams(c / L, max_epochs, task),
                      repetitions=1, wall_clock_budget_seconds=budget)
            for c in (1.0, 1.9)]


def spectral_norm_sq(ds: Dataset, iters: int = 100, seed: int = 0) -> float:
    """Largest eigenvalue of ``X^T X`` by power iteration, padded by 1%."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(ds.n_features)
    v /= np.linalg.norm(v) or 1.0
    lam = 0.0
    for _ in range(iters):
        u = linalg.matvec_transposed(ds, linalg.matvec(ds, v))
        norm = float(np.linalg.norm(u))
        if norm == 0.0:
            return 0.0
        v = u / norm
        if abs(norm - lam) <= 1e-9 * norm:
            lam = norm
            break
        lam = norm
    return lam * 1.01


def estimate_optimal_loss(task, ds: Dataset, budget: float = 60.0, configs=None,
                          cache: bool = True, clock=time.perf_counter) -> float:
    """Lowest loss observed over ``configs`` (default: full-batch GD at two
    safe step sizes), each run for at most ``budget`` seconds of elapsed time,
    loss evaluation included.

    Results are cached per task, dataset content, budget, and config set.
    """
    task = Task(task)
    if configs is None:
        configs = default_optimal_configs(task, ds, budget)
    configs = [replace(c, task=task, repetitions=1,
                       wall_clock_budget_seconds=min(c.wall_clock_budget_seconds, budget))
               for c in configs]
    key = (task, ds.fingerprint(), budget, tuple(repr(c) for c in configs))
    if cache and key in _OPTIMAL_CACHE:
        return _OPTIMAL_CACHE[key]
    best = math.inf
    for cfg in configs:
        try:
            trace = _run_once(cfg, ds, clock, elapsed_budget=True)
        except DivergenceError as exc:
            trace = exc.trace
            if trace is None:
                continue
        finite = [x for x in trace.losses + [trace.initial_loss] if math.isfinite(x)]
        if finite:
            best = min(best, min(finite))
    if cache:
        _OPTIMAL_CACHE[key] = best
    return best


def _fmt(x) -> str:
    if isinstance(x, bool) or x is None:
        return json.dumps(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "Infinity" if x > 0 else "-Infinity"
        return "%.17g" % x
    return json.dumps(str(x))


def to_json(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with every float written to 17 significant digits."""
    pad, inner = " " * (indent * _level), " " * (indent * (_level + 1))
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {to_json(v, indent, _level + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(_fmt(v) for v in obj) + "]"
        items = [inner + to_json(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    return _fmt(obj)


def _csv_value(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "%.17g" % x
    return str(x)


def export(reports, fmt: str, path) -> list[Path]:
    """Write reports as ``csv``, ``json`` or ``plot`` data; returns the files.

    CSV has one row per (report, tolerance) under :data:`CSV_HEADER`; an empty
    ``epochs_to`` cell means the threshold was never reached. Plot data is one
    ``time loss`` line per epoch (cumulative time), one file per report: the
    given path for a single report, ``<stem>-<i><suffix>`` otherwise.
    """
    if isinstance(reports, RunReport):
        reports = [reports]
    reports = list(reports)
    path = Path(path)
    if fmt == "json":
        path.write_text(to_json([r.to_dict() for r in reports]) + "\n")
        return [path]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in reports:
            for tol in TOLERANCES:
                k = tol_key(tol)
                writer.writerow([_csv_value(v) for v in (
                    r.label, r.config.get("engine"), r.config.get("task"),
                    r.config.get("plan", ""), float(r.config.get("alpha", math.nan)), tol,
                    r.epochs_to.get(k), r.time_to_convergence.get(k),
                    r.time_per_epoch_ms, r.optimal_loss_used, r.final_loss, r.time_unit)])
        path.write_text(buf.getvalue())
        return [path]
    if fmt == "plot":
        out = []
        for i, r in enumerate(reports):
            p = path if len(reports) == 1 else path.with_name(f"{path.stem}-{i}{path.suffix}")
            p.write_text("".join("%.17g %.17g\n" % (t, loss) for _, loss, t in r.loss_trace))
            out.append(p)
        return out
    raise ValueError(f"unknown export format {fmt!r}; use csv, json or plot")


def load_reports(path) -> list[RunReport]:
    """Read reports written by ``export(..., "json", path)``."""
    return [RunReport.from_dict(d) for d in json.loads(Path(path).read_text())]
