"""Hogwild: lock-free parallel incremental SGD over an execution plan.

An :class:`ExecutionPlan` fixes three choices:

* access path: row/column-major storage, round-robin or chunked assignment;
* model replication: one shared model (kernel), one per worker group (block),
  one per worker (thread), or one sparse replica per example (example);
* k-wise data replication: each worker also takes the k examples past its
  partition boundary.

Workers are OS threads running the compiled kernel without the GIL, so model
coordinates really are read and written concurrently. Lost updates are allowed;
torn values are not (aligned 8-byte stores). The only barrier is the end of an
epoch, where replicas are merged and the loss is measured.
"""

from __future__ import annotations

import enum
import math
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from ._backend import kernels
from .dataset import Dataset, Layout, Strategy, assign, convert_layout
from .glm import (
    Hyperparams,
    LossTrace,
    Task,
    check_finite,
    check_model,
    dataset_loss,
    zero_model,
)


class PlanError(ValueError):
    pass


class AccessPath(str, enum.Enum):
    ROW_RR = "row-rr"
    ROW_CH = "row-ch"
    COL_RR = "col-rr"
    COL_CH = "col-ch"

    @property
    def strategy(self) -> Strategy:
        return Strategy.ROUND_ROBIN if self.value.endswith("rr") else Strategy.CHUNK

    @property
    def column_major(self) -> bool:
        return self.value.startswith("col")


class Replication(str, enum.Enum):
    KERNEL = "kernel"
    BLOCK = "block"
    THREAD = "thread"
    EXAMPLE = "example"


_ROW_LAYOUTS = (Layout.DENSE_ROW, Layout.CSR, Layout.PADDED)
_COL_LAYOUTS = (Layout.DENSE_COL, Layout.PADDED)


@dataclass(frozen=True)
class ExecutionPlan:
    access_path: AccessPath = AccessPath.ROW_CH
    replication: Replication = Replication.KERNEL
    k: int = 0
    workers: int = 1
    group_size: int = 32
    circular_offsets: bool = False
    merge_period_epochs: int | None = 1

    def __post_init__(self):
        object.__setattr__(self, "access_path", AccessPath(self.access_path))
        object.__setattr__(self, "replication", Replication(self.replication))
        if self.workers < 1:
            raise PlanError("workers must be >= 1")
        if self.group_size < 1:
            raise PlanError("group_size must be >= 1")
        if self.k < 0:
            raise PlanError("replication factor k must be >= 0")
        if self.merge_period_epochs is not None and self.merge_period_epochs < 1:
            raise PlanError("merge period must be >= 1 epoch (or None for never)")

    @classmethod
    def parse(cls, text: str, **overrides) -> "ExecutionPlan":
        """Parse ``row-rr:kernel:10`` or ``col-rr + block + no-rep`` style strings."""
        parts = [p.strip().lower() for p in re.split(r"[:+]", text) if p.strip()]
        if len(parts) not in (2, 3):
            raise PlanError(f"cannot parse plan {text!r}: want <access>:<replication>:<k>")
        try:
            access, repl = AccessPath(parts[0]), Replication(parts[1])
        except ValueError as exc:
            raise PlanError(f"cannot parse plan {text!r}: {exc}") from None
        k = 0
        if len(parts) == 3:
            m = re.fullmatch(r"(?:no-rep|(?:rep-)?(\d+))", parts[2])
            if m is None:
                raise PlanError(f"bad data replication {parts[2]!r} in {text!r}")
            k = int(m.group(1) or 0)
        return cls(access, repl, k, **overrides)

    @property
    def label(self) -> str:
        rep = "no-rep" if self.k == 0 else f"rep-{self.k}"
        return f"{self.access_path.value} + {self.replication.value} + {rep}"

    @property
    def strategy(self) -> Strategy:
        return self.access_path.strategy

    @property
    def n_groups(self) -> int:
        return math.ceil(self.workers / self.group_size)

    def validate_for(self, ds: Dataset) -> None:
        allowed = _COL_LAYOUTS if self.access_path.column_major else _ROW_LAYOUTS
        if ds.layout not in allowed:
            raise PlanError(
                f"{self.access_path.value} cannot run on {ds.layout.value} data; "
                f"use one of {[l.value for l in allowed]}")
        if self.replication is Replication.EXAMPLE and ds.layout.is_dense:
            raise PlanError("example replication needs a sparse layout")

    def layout_for(self, ds: Dataset) -> Layout:
        """Layout this plan should run on for data like ``ds``."""
        sparse = not ds.layout.is_dense
        if self.access_path.column_major:
            return Layout.PADDED if sparse else Layout.DENSE_COL
        if ds.layout in _ROW_LAYOUTS:
            return ds.layout
        return Layout.DENSE_ROW

    def prepare(self, ds: Dataset) -> Dataset:
        """``ds`` converted to the layout this plan runs on, then validated."""
        out = convert_layout(ds, self.layout_for(ds))
        self.validate_for(out)
        return out


@dataclass(frozen=True)
class ReplicaScope:
    """Who shares which model copy.

    ``model_of_worker[t]`` is worker ``t``'s replica id; ``None`` means replicas
    are per example rather than per worker.
    """

    replication: Replication
    n_replicas: int | None
    model_of_worker: tuple | None
    merged_at_epoch_end: bool


def replica_scope(plan: ExecutionPlan) -> ReplicaScope:
    T = plan.workers
    if plan.replication is Replication.KERNEL:
        return ReplicaScope(plan.replication, 1, (0,) * T, False)
    if plan.replication is Replication.BLOCK:
        return ReplicaScope(plan.replication, plan.n_groups,
                            tuple(t // plan.group_size for t in range(T)), True)
    if plan.replication is Replication.THREAD:
        return ReplicaScope(plan.replication, T, tuple(range(T)), True)
    return ReplicaScope(plan.replication, None, None, False)


class SharedModel:
    """Model vector written concurrently at coordinate granularity."""

    def __init__(self, w):
        self.array = np.array(w, dtype=np.float64, order="C")

    def __len__(self):
        return self.array.shape[0]

    def snapshot(self) -> np.ndarray:
        return self.array.copy()


def offset_positions(length: int, worker_id: int) -> list[int]:
    """Support positions in the order worker ``worker_id`` updates them."""
    if length == 0:
        return []
    off = worker_id % length
    return [(t + off) % length for t in range(length)]


def update_with_offset(w, grad, alpha: float, worker_id: int) -> list[int]:
    """Apply ``w -= alpha * g`` starting at position ``worker_id mod s`` of the
    gradient's support and wrapping; returns the coordinates in update order."""
    arr = w.array if isinstance(w, SharedModel) else w
    idx, val = grad
    idx = np.asarray(idx).tolist()
    val = np.asarray(val, dtype=np.float64).tolist()
    order = []
    for p in offset_positions(len(idx), worker_id):
        j = idx[p]
        arr[j] = float(arr[j]) - alpha * val[p]
        order.append(j)
    return order


def merge_models(replicas, weights=None) -> np.ndarray:
    """Coordinate-wise (weighted) mean, written back into every replica."""
    stack = np.stack([np.asarray(r, dtype=np.float64) for r in replicas])
    if weights is None:
        merged = stack.sum(axis=0) / stack.shape[0]
    else:
        wts = np.asarray(weights, dtype=np.float64)
        if wts.shape != (stack.shape[0],) or np.any(wts < 0) or wts.sum() <= 0:
            raise ValueError("weights must be nonnegative, one per replica, not all 0")
        merged = (wts[:, None] * stack).sum(axis=0) / wts.sum()
    for r in replicas:
        if isinstance(r, np.ndarray) and r.flags.writeable:
            r[:] = merged
    return merged


def merge_changed(base: np.ndarray, replicas) -> np.ndarray:
    """Average, per coordinate, only the replicas that moved away from ``base``.

    Coordinates no replica touched keep the ``base`` value, so sparse updates
    are not diluted by replicas that never saw the feature.
    """
    total = np.zeros_like(base)
    count = np.zeros(base.shape, dtype=np.int64)
    for r in replicas:
        moved = r != base
        total[moved] += r[moved]
        count[moved] += 1
    out = base.copy()
    hit = count > 0
    out[hit] = total[hit] / count[hit]
    return out


class _Instance:
    """One Hogwild instance: assignment, model(s), and per-epoch work."""

    def __init__(self, task: Task, ds: Dataset, plan: ExecutionPlan, seed, shuffle: bool,
                 w0):
        plan.validate_for(ds)
        if ds.n_examples == 0:
            raise ValueError("cannot train on an empty dataset")
        self.task, self.ds, self.plan = task, ds, plan
        self.acc = ds.access()
        self.assignment = assign(ds.n_examples, plan.workers, plan.strategy, plan.k)
        self.scope = replica_scope(plan)
        self.shuffle = shuffle
        self.rng = np.random.default_rng(seed)
        self.w = zero_model(ds.n_features) if w0 is None else \
            np.array(check_model(w0, ds.n_features), dtype=np.float64)
        self._replicas: list[np.ndarray] = []

    def epoch_jobs(self, alpha: float):
        """Callables (one per worker) for one epoch; each returns its work count."""
        plan, acc = self.plan, self.acc
        lists = self.assignment.lists
        if self.shuffle:
            perm = self.rng.permutation(self.ds.n_examples)
            lists = [np.ascontiguousarray(perm[a]) for a in lists]
        example_mode = plan.replication is Replication.EXAMPLE
        if self.scope.merged_at_epoch_end:
            self._replicas = [self.w.copy() for _ in range(self.scope.n_replicas)]
            targets = [self._replicas[m] for m in self.scope.model_of_worker]
        else:
            self._replicas = []
            targets = [self.w] * plan.workers
        if example_mode:
            replica = np.zeros(acc.values.shape[0])
            touched = np.zeros(self.ds.n_examples, dtype=np.uint8)
        else:
            replica = np.zeros(0)
            touched = np.zeros(0, dtype=np.uint8)
        code = self.task.code

        def job(t):
            return kernels.hogwild_pass(
                acc.values, acc.indices, acc.starts, acc.lengths, acc.stride, acc.dense,
                self.ds.labels, lists[t], targets[t], alpha, code, t,
                plan.circular_offsets, example_mode, replica, touched)

        return [lambda t=t: job(t) for t in range(plan.workers)]

    def finish_epoch(self) -> None:
        if self._replicas:
            self.w = merge_changed(self.w, self._replicas)
            self._replicas = []


def _run_jobs(jobs, pool: ThreadPoolExecutor | None) -> int:
    if pool is None or len(jobs) == 1:
        return sum(j() for j in jobs)
    return sum(f.result() for f in [pool.submit(j) for j in jobs])


def hogwild_train(task, ds: Dataset, hyper: Hyperparams, plan: ExecutionPlan,
                  seed: int | None = 0, w0=None, shuffle: bool = False,
                  clock=time.perf_counter, should_stop=None):
    """Asynchronous incremental SGD for ``hyper.epochs`` epochs under ``plan``.

    Each worker walks its assigned example list once per epoch (in a fresh
    seeded permutation of ids when ``shuffle`` is set). ``trace.work`` records
    gradient evaluations per epoch, ``n + workers * k``. ``should_stop(trace)``
    is consulted after every epoch.
    """
    task = Task(task)
    inst = _Instance(task, ds, plan, seed, shuffle, w0)
    trace = LossTrace(dataset_loss(task, ds, inst.w))
    pool = ThreadPoolExecutor(plan.workers, thread_name_prefix="hogwild") \
        if plan.workers > 1 else None
    try:
        for epoch in range(hyper.epochs):
            jobs = inst.epoch_jobs(hyper.step(epoch))
            t0 = clock()
            work = _run_jobs(jobs, pool)
            inst.finish_epoch()
            elapsed = clock() - t0
            w = inst.w
            loss = dataset_loss(task, ds, w) if np.all(np.isfinite(w)) else math.inf
            trace.record(loss, elapsed, work)
            check_finite(w, loss, epoch + 1, trace)
            if should_stop is not None and should_stop(trace):
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return inst.w, trace


def numa_dual_train(task, ds: Dataset, hyper: Hyperparams, plan: ExecutionPlan,
                    seed: int | None = 0, w0=None, instance_seeds=None,
                    shuffle: bool = True, copy_data: bool = True,
                    clock=time.perf_counter, should_stop=None):
    """Two independent Hogwild instances over full copies of the data, merged
    every ``plan.merge_period_epochs`` epochs (``None``: never).

    The instances differ only through their visit orders, drawn from
    ``instance_seeds`` (default ``seed`` and ``seed + 1``). The merger averages
    both models and refreshes each instance. Losses are reported on the
    average of the two models.
    """
    task = Task(task)
    if instance_seeds is None:
        base = 0 if seed is None else seed
        instance_seeds = (base, base + 1)
    copies = [ds.take(np.arange(ds.n_examples)) if copy_data else ds for _ in range(2)]
    insts = [_Instance(task, c, plan, s, shuffle, w0) for c, s in zip(copies, instance_seeds)]
    period = plan.merge_period_epochs
    trace = LossTrace(dataset_loss(task, ds, insts[0].w))
    pool = ThreadPoolExecutor(2 * plan.workers, thread_name_prefix="numa")
    try:
        for epoch in range(hyper.epochs):
            alpha = hyper.step(epoch)
            jobs = [j for inst in insts for j in inst.epoch_jobs(alpha)]
            t0 = clock()
            work = _run_jobs(jobs, pool)
            for inst in insts:
                inst.finish_epoch()
            if period is not None and (epoch + 1) % period == 0:
                merged = merge_models([inst.w for inst in insts])
            else:
                merged = (insts[0].w + insts[1].w) / 2
            elapsed = clock() - t0
            loss = dataset_loss(task, ds, merged) if np.all(np.isfinite(merged)) else math.inf
            trace.record(loss, elapsed, work)
            check_finite(merged, loss, epoch + 1, trace)
            if should_stop is not None and should_stop(trace):
                break
    finally:
        pool.shutdown()
    return merged, trace


def check_word_atomicity(d: int = 4096, writers: int = 4, sweeps: int = 200,
                         backend=None) -> int:
    """Race writers storing distinct 64-bit patterns against a reader.

    Returns the number of reads that saw a value that no writer stored (a torn
    word). Zero is the expected outcome.
    """
    kern = kernels if backend is None else backend
    patterns = [np.uint64(0x5555555555555555), np.uint64(0xAAAAAAAAAAAAAAAA),
                np.uint64(0x0F0F0F0F0F0F0F0F)]
    bits = np.full(d, patterns[0], dtype=np.uint64)
    bad = []
    threads = [threading.Thread(target=kern.pattern_writer,
                                args=(bits, patterns[t % 3], sweeps))
               for t in range(writers)]
    reader = threading.Thread(
        target=lambda: bad.append(kern.pattern_reader(bits, *patterns, sweeps)))
    for th in threads + [reader]:
        th.start()
    for th in threads + [reader]:
        th.join()
    return bad[0]


def with_workers(plan: ExecutionPlan, workers: int) -> ExecutionPlan:
    return replace(plan, workers=workers)
