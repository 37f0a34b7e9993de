"""Deterministic lockstep simulation of warp-style SIMD Hogwild.

Lanes are the plan's workers, grouped into warps of ``warp_width`` consecutive
lanes. A warp handles one example per lane per round:

* read phase: one micro-step per support position, every live lane loads one
  data value and one model coordinate and accumulates its margin;
* write phase: one micro-step per support position, every live lane issues one
  read-modify-write of a model coordinate.

Within a write micro-step, writes to the same coordinate of the same model
collapse to one survivor, chosen by the conflict policy. Lanes whose example
is shorter than the longest one in the warp sit idle (stall). Warps run one
after the other, round by round, so there are never conflicts between warps.

Memory traffic is counted in segments: each lockstep access costs one
transaction per distinct ``floor(address / segment_size)`` among the live
lanes. Data addresses are positions in the storage the access path runs on
(row-major copy for row paths, column-major or padded for column paths);
model addresses are ``model_id * d + j``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .async_engine import ExecutionPlan, Replication, merge_changed, replica_scope
from .dataset import Dataset, assign
from .glm import Hyperparams, LossTrace, Task, check_model, convergence_epochs, dataset_loss


class ConflictPolicy(str, enum.Enum):
    LOWEST_LANE = "lowest-lane"
    SEEDED_RANDOM = "seeded-random"


@dataclass(frozen=True)
class WarpConfig:
    warp_width: int = 32
    segment_size: int = 8
    conflict_policy: ConflictPolicy = ConflictPolicy.LOWEST_LANE
    offsets_enabled: bool = False
    transaction_cost: float = 4.0  # micro-steps charged per memory transaction

    def __post_init__(self):
        object.__setattr__(self, "conflict_policy", ConflictPolicy(self.conflict_policy))
        if self.warp_width < 1:
            raise ValueError("warp_width must be >= 1")
        if self.segment_size < 1:
            raise ValueError("segment_size must be >= 1")
        if self.transaction_cost < 0:
            raise ValueError("transaction_cost must be >= 0")


@dataclass
class WarpStats:
    attempted_updates: int = 0
    surviving_updates: int = 0
    memory_transactions: int = 0
    micro_steps: int = 0
    gradient_evaluations: int = 0
    # (micro-step, coordinate) pairs written by two or more lanes, and how many
    # writes survived at those pairs
    conflicted_coordinates: int = 0
    conflict_survivors: int = 0
    losses: list = field(default_factory=list)
    transaction_cost: float = 4.0

    @property
    def survivor_fraction(self) -> float:
        if self.attempted_updates == 0:
            return 1.0
        return self.surviving_updates / self.attempted_updates

    @property
    def simulated_time(self) -> float:
        return self.micro_steps + self.transaction_cost * self.memory_transactions

    def add(self, other: "WarpStats") -> None:
        self.attempted_updates += other.attempted_updates
        self.surviving_updates += other.surviving_updates
        self.memory_transactions += other.memory_transactions
        self.micro_steps += other.micro_steps
        self.gradient_evaluations += other.gradient_evaluations
        self.conflicted_coordinates += other.conflicted_coordinates
        self.conflict_survivors += other.conflict_survivors
        self.losses.extend(other.losses)


def _segments(addresses: np.ndarray, segment_size: int) -> int:
    if addresses.size == 0:
        return 0
    return int(np.unique(addresses // segment_size).size)


def count_transactions(streams, segment_size: int) -> int:
    """Transactions for lanes issuing ``streams[l][s]`` at lockstep access ``s``.

    Lanes with shorter streams (or a ``None`` entry) are idle at that access.
    """
    if segment_size < 1:
        raise ValueError("segment_size must be >= 1")
    streams = [list(s) for s in streams]
    steps = max((len(s) for s in streams), default=0)
    total = 0
    for s in range(steps):
        live = [st[s] for st in streams if s < len(st) and st[s] is not None]
        if any(a < 0 for a in live):
            raise ValueError("addresses must be nonnegative")
        total += _segments(np.asarray(live, dtype=np.int64), segment_size)
    return total


class _Simulator:
    def __init__(self, task, ds: Dataset, plan: ExecutionPlan, warp: WarpConfig):
        self.task = Task(task)
        self.data = plan.prepare(ds)
        if self.data.n_examples == 0:
            raise ValueError("cannot simulate on an empty dataset")
        self.plan, self.warp = plan, warp
        self.acc = self.data.access()
        self.d = self.data.n_features
        self.assignment = assign(self.data.n_examples, plan.workers, plan.strategy, plan.k)
        self.scope = replica_scope(plan)
        self.example_mode = plan.replication is Replication.EXAMPLE
        self.offsets = warp.offsets_enabled or plan.circular_offsets
        T, W = plan.workers, warp.warp_width
        self.warps = [np.arange(b, min(b + W, T)) for b in range(0, T, W)]
        owner = self.scope.model_of_worker or (0,) * T
        self.model_of = np.asarray(owner, dtype=np.int64)

    def epoch(self, w: np.ndarray, alpha: float, rng, observer=None):
        d = self.d
        if self.scope.merged_at_epoch_end:
            models = np.tile(w, self.scope.n_replicas)
        else:
            models = w.copy()
        if self.example_mode:
            replica = np.zeros(self.acc.values.shape[0])
            touched = np.zeros(self.data.n_examples, dtype=bool)
        else:
            replica = touched = None
        stats = WarpStats(transaction_cost=self.warp.transaction_cost)
        lists = self.assignment.lists
        rounds = max(a.size for a in lists)
        for r in range(rounds):
            for lanes in self.warps:
                live = np.array([t for t in lanes if r < lists[t].size], dtype=np.int64)
                if live.size:
                    ex = np.array([lists[t][r] for t in live], dtype=np.int64)
                    self._round(live, ex, models, replica, touched, alpha, rng, stats,
                                observer)
        if self.scope.merged_at_epoch_end:
            out = merge_changed(w, [models[m * d:(m + 1) * d] for m in
                                    range(self.scope.n_replicas)])
        else:
            out = models
        return out, stats

    def _round(self, lanes, ex, M, replica, touched, alpha, rng, stats, observer):
        acc, d, seg = self.acc, self.d, self.warp.segment_size
        st = acc.starts[ex]
        ln = acc.lengths[ex]
        y = self.data.labels[ex]
        base = self.model_of[lanes] * d
        m = lanes.size

        margin = np.zeros(m)
        for s in range(int(ln.max(initial=0))):
            live = ln > s
            p = st[live] + s * acc.stride
            j = np.full(p.size, s, dtype=np.int64) if acc.dense else acc.indices[p]
            v = acc.values[p]
            if replica is not None:
                fresh = ~touched[ex[live]]
                replica[p[fresh]] = M[j[fresh]]
                wv = replica[p]
                model_addr = p
            else:
                model_addr = base[live] + j
                wv = M[model_addr]
            margin[live] = margin[live] + v * wv
            stats.micro_steps += 1
            stats.memory_transactions += _segments(p, seg) + _segments(model_addr, seg)
        if touched is not None:
            touched[ex] = True
        stats.gradient_evaluations += m

        coef = np.zeros(m)
        writes = np.zeros(m, dtype=bool)
        for l in range(m):
            yl, ml = float(y[l]), float(margin[l])
            if self.task is Task.LR:
                coef[l] = kernels.sigmoid(-(yl * ml)) * (-yl)
                writes[l] = True
            elif yl * ml < 1.0:
                coef[l] = -yl
                writes[l] = True
        wlen = np.where(writes, ln, 0)
        off = np.zeros(m, dtype=np.int64)
        if self.offsets:
            nz = ln > 0
            off[nz] = lanes[nz] % ln[nz]

        for s in range(int(wlen.max(initial=0))):
            live = wlen > s
            q = s + off[live]
            q = np.where(q >= ln[live], q - ln[live], q)
            p = st[live] + q * acc.stride
            j = q if acc.dense else acc.indices[p]
            v = acc.values[p]
            key = base[live] + j
            if replica is not None:
                new = replica[p] - alpha * (coef[live] * v)
                replica[p] = new
            else:
                new = M[key] - alpha * (coef[live] * v)
            order = np.arange(key.size)
            if self.warp.conflict_policy is ConflictPolicy.SEEDED_RANDOM:
                order = rng.permutation(key.size)
            uniq, first, counts = np.unique(key[order], return_index=True, return_counts=True)
            winners = order[first]
            M[key[winners]] = new[winners]
            if observer is not None:
                observer(lanes[live], key, winners)
            stats.attempted_updates += int(key.size)
            stats.surviving_updates += int(winners.size)
            hot = counts > 1
            stats.conflicted_coordinates += int(hot.sum())
            stats.conflict_survivors += int(np.isin(key[winners], uniq[hot]).sum())
            stats.micro_steps += 1
            stats.memory_transactions += _segments(key, seg)


def _as_plan(plan) -> ExecutionPlan:
    return plan if isinstance(plan, ExecutionPlan) else ExecutionPlan.parse(plan)


def simulate_epoch(task, ds: Dataset, w, alpha: float, plan, warp: WarpConfig | None = None,
                   seed: int = 0, observer=None):
    """One simulated epoch from model ``w``; returns ``(w', WarpStats)``.

    ``observer(lanes, keys, winners)``, if given, is called for every write
    micro-step with the writing lanes, their flat model addresses, and the
    indices (into ``lanes``) of the surviving writes.
    """
    plan = _as_plan(plan)
    warp = warp or WarpConfig()
    sim = _Simulator(task, ds, plan, warp)
    w = np.array(check_model(w, ds.n_features), dtype=np.float64)
    w2, stats = sim.epoch(w, float(alpha), np.random.default_rng(seed), observer)
    stats.losses.append(dataset_loss(task, ds, w2))
    return w2, stats


def simulate(task, ds: Dataset, hyper: Hyperparams, plan, warp: WarpConfig | None = None,
             seed: int = 0, w0=None, should_stop=None):
    """``hyper.epochs`` simulated epochs; returns ``(w, total WarpStats, LossTrace)``.

    The trace's epoch "times" are simulated time units, not seconds.
    """
    task = Task(task)
    plan = _as_plan(plan)
    warp = warp or WarpConfig()
    sim = _Simulator(task, ds, plan, warp)
    w = np.zeros(ds.n_features) if w0 is None else \
        np.array(check_model(w0, ds.n_features), dtype=np.float64)
    rng = np.random.default_rng(seed)
    trace = LossTrace(dataset_loss(task, ds, w))
    total = WarpStats(transaction_cost=warp.transaction_cost)
    for epoch in range(hyper.epochs):
        w, stats = sim.epoch(w, hyper.step(epoch), rng)
        loss = dataset_loss(task, ds, w) if np.all(np.isfinite(w)) else float("inf")
        stats.losses.append(loss)
        trace.record(loss, stats.simulated_time, stats.gradient_evaluations)
        total.add(stats)
        if not np.isfinite(loss) or (should_stop is not None and should_stop(trace)):
            break
    return w, total, trace


@dataclass(frozen=True)
class SweepRow:
    plan: str
    transactions_per_epoch: float
    survivor_fraction: float
    simulated_time_per_epoch: float
    epochs_to_tolerance: int | None
    final_loss: float


def sweep_plans(task, ds: Dataset, plans, warp: WarpConfig | None = None, budget: int = 10,
                alpha: float = 0.1, tol: float = 0.01, seed: int = 0,
                optimal_loss: float | None = None, workers: int | None = None) -> list[SweepRow]:
    """Simulate every plan for ``budget`` epochs and tabulate the results.

    Plans given as strings run with ``workers`` lanes (default: one warp).
    Epochs-to-tolerance are measured against ``optimal_loss``, or against the
    lowest loss any plan reached when it is not given.
    """
    warp = warp or WarpConfig()
    lanes = warp.warp_width if workers is None else workers
    hyper = Hyperparams(alpha, budget, task)
    runs = []
    for p in plans:
        plan = p if isinstance(p, ExecutionPlan) else ExecutionPlan.parse(p, workers=lanes)
        _, stats, trace = simulate(task, ds, hyper, plan, warp, seed)
        runs.append((plan, stats, trace))
    if not runs:
        return []
    if optimal_loss is None:
        optimal_loss = min(min(t.losses, default=t.initial_loss) for _, _, t in runs)
    rows = []
    for plan, stats, trace in runs:
        e = max(len(trace), 1)
        rows.append(SweepRow(plan.label, stats.memory_transactions / e,
                             stats.survivor_fraction, stats.simulated_time / e,
                             convergence_epochs(trace, optimal_loss, tol),
                             trace.losses[-1] if trace.losses else trace.initial_loss))
    return rows

