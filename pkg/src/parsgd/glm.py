"""Losses and gradients for logistic regression and the linear SVM.

Examples are passed either as a dense 1-D array of length ``d`` or as a sparse
``(indices, values)`` pair. Margins are summed sequentially in storage order so
that the scalar routines here round exactly like the batch kernels.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .dataset import Dataset


class Task(str, enum.Enum):
    LR = "lr"
    SVM = "svm"

    @property
    def code(self) -> int:
        return 0 if self is Task.LR else 1


class DivergenceError(ArithmeticError):
    """Training produced a non-finite model or loss."""

    def __init__(self, message: str, epoch: int | None = None, trace=None):
        super().__init__(message)
        self.epoch = epoch
        self.trace = trace


@dataclass(frozen=True)
class Hyperparams:
    """Step size, mini-batch size, epoch count, and task.

    ``batch=None`` means full batch (B = N). ``decay`` multiplies the step size
    after every epoch; the default of 1 keeps it constant.
    """

    alpha: float
    epochs: int
    task: Task = Task.LR
    batch: int | None = None
    decay: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))
        if not self.alpha > 0 or not math.isfinite(self.alpha):
            raise ValueError(f"step size must be positive, got {self.alpha}")
        if self.epochs < 1:
            raise ValueError(f"need at least one epoch, got {self.epochs}")
        if self.batch is not None and self.batch < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch}")
        if not self.decay > 0:
            raise ValueError("decay must be positive")

    def batch_size(self, n: int) -> int:
        if n < 1:
            raise ValueError("cannot train on an empty dataset")
        b = n if self.batch is None else self.batch
        if b > n:
            raise ValueError(f"batch size {b} exceeds dataset size {n}")
        return b

    def step(self, epoch: int) -> float:
        """Step size used during 0-based ``epoch``."""
        return self.alpha * self.decay ** epoch


def zero_model(d: int) -> np.ndarray:
    return np.zeros(d, dtype=np.float64)


def check_model(w: np.ndarray, d: int) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (d,):
        raise ValueError(f"model has shape {w.shape}, dataset dimension is {d}")
    return w


def _support(w, x):
    if isinstance(x, tuple):
        idx, val = x
        idx = np.asarray(idx, dtype=np.int64)
        val = np.asarray(val, dtype=np.float64)
        if idx.shape != val.shape:
            raise ValueError("sparse example: indices and values differ in length")
        if idx.size and (idx.min() < 0 or idx.max() >= w.shape[0]):
            raise ValueError("sparse example has an index outside the model")
        return idx, val
    x = np.asarray(x, dtype=np.float64)
    if x.shape != w.shape:
        raise ValueError(f"example has shape {x.shape}, model has shape {w.shape}")
    idx = np.flatnonzero(x)
    return idx, x[idx]


def margin(w, x) -> float:
    """``x . w`` summed left to right over the stored support."""
    idx, val = _support(np.asarray(w, dtype=np.float64), x)
    acc = 0.0
    for j, v in zip(idx.tolist(), val.tolist()):
        acc = acc + v * float(w[j])
    return acc


def point_loss(task, w, x, y: float) -> float:
    """log(1 + exp(-y x.w)) for LR, max(0, 1 - y x.w) for SVM."""
    return kernels.point_loss_margin(Task(task).code, float(y) * margin(w, x))


def gradient_coefficient(task, ym: float, y: float) -> float:
    """Scalar ``c`` with gradient ``c * x``, given ``ym = y * (x . w)``."""
    if Task(task) is Task.LR:
        return kernels.sigmoid(-ym) * (-y)
    return -y if ym < 1.0 else 0.0


def point_gradient(task, w, x, y: float) -> tuple[np.ndarray, np.ndarray]:
    """Gradient restricted to ``x``'s support, as ``(indices, values)``.

    The SVM subgradient at margin exactly 1 is zero.
    """
    w = np.asarray(w, dtype=np.float64)
    idx, val = _support(w, x)
    y = float(y)
    c = gradient_coefficient(task, y * margin(w, (idx, val)), y)
    return idx, val * c


def dataset_loss(task, ds: Dataset, w) -> float:
    """Objective value: sum of point losses over all examples, in id order."""
    w = check_model(w, ds.n_features)
    a = ds.access()
    return kernels.loss_sum(a.values, a.indices, a.starts, a.lengths, a.stride, a.dense,
                            ds.labels, np.ascontiguousarray(w), Task(task).code)


def check_finite(w: np.ndarray, loss: float | None = None, epoch: int | None = None,
                 trace=None) -> None:
    if not np.all(np.isfinite(w)) or (loss is not None and not math.isfinite(loss)):
        bad = int(np.count_nonzero(~np.isfinite(w)))
        raise DivergenceError(
            f"training diverged at epoch {epoch}: {bad} non-finite coordinates, "
            f"loss={loss}", epoch=epoch, trace=trace)


@dataclass
class LossTrace:
    """Per-epoch losses plus the timed (loss-free) duration of each epoch."""

    initial_loss: float
    losses: list = None
    epoch_times: list = None
    work: list = None  # gradient evaluations per epoch, where counted

    def __post_init__(self):
        self.losses = [] if self.losses is None else list(self.losses)
        self.epoch_times = [] if self.epoch_times is None else list(self.epoch_times)
        self.work = [] if self.work is None else list(self.work)

    def record(self, loss: float, seconds: float, work: int | None = None) -> None:
        self.losses.append(float(loss))
        self.epoch_times.append(float(seconds))
        if work is not None:
            self.work.append(int(work))

    def __len__(self):
        return len(self.losses)

    @property
    def cumulative_times(self) -> list:
        out, t = [], 0.0
        for s in self.epoch_times:
            t += s
            out.append(t)
        return out


def convergence_epochs(trace, optimal_loss: float, tol: float) -> int | None:
    """First 1-based epoch whose loss is within ``tol`` of ``optimal_loss``.

    ``trace`` is a :class:`LossTrace` or a plain sequence of per-epoch losses.
    Returns ``None`` if the threshold ``(1 + tol) * optimal_loss`` is never met.
    """
    if tol < 0:
        raise ValueError("tolerance must be nonnegative")
    losses = trace.losses if isinstance(trace, LossTrace) else trace
    target = (1.0 + tol) * optimal_loss
    for e, loss in enumerate(losses, 1):
        if loss <= target:
            return e
    return None
