"""Row-parallel primitives for the synchronous gradient pipeline.

Results never depend on the worker count. ``matvec`` writes each output from
exactly one worker with a left-to-right row sum. ``matvec_transposed`` either
runs one left-to-right dot per feature over a column-major copy, or scatters
fixed blocks of ``LEAF_ROWS`` rows into partial vectors that are combined by a
pairwise tree whose shape depends only on the number of blocks.
"""

from __future__ import annotations

import functools
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ._backend import kernels
from .dataset import Dataset, DatasetError, Layout
from .glm import Task

LEAF_ROWS = 256

ELEMENTWISE_OPS = ("mul", "div", "exp", "neg", "add_scalar")


@functools.lru_cache(maxsize=None)
def _pool(workers: int) -> ThreadPoolExecutor:
    return ThreadPoolExecutor(max_workers=workers, thread_name_prefix="parsgd-linalg")


def _split(total: int, parts: int) -> list[tuple[int, int]]:
    parts = max(1, min(parts, total))
    step, extra = divmod(total, parts)
    out, lo = [], 0
    for p in range(parts):
        hi = lo + step + (1 if p < extra else 0)
        out.append((lo, hi))
        lo = hi
    return out


def _run(fn, ranges, workers: int) -> None:
    if workers <= 1 or len(ranges) <= 1:
        for lo, hi in ranges:
            fn(lo, hi)
        return
    futures = [_pool(workers).submit(fn, lo, hi) for lo, hi in ranges]
    for f in futures:
        f.result()


def _rows(ds: Dataset, rows) -> np.ndarray:
    if rows is None:
        return np.arange(ds.n_examples, dtype=np.int64)
    return np.ascontiguousarray(rows, dtype=np.int64)


def _vec(v, n: int, what: str) -> np.ndarray:
    v = np.ascontiguousarray(v, dtype=np.float64)
    if v.shape != (n,):
        raise ValueError(f"{what} has shape {v.shape}, expected ({n},)")
    return v


def matvec(ds: Dataset, v, rows=None, workers: int = 1) -> np.ndarray:
    """``X[rows] @ v``; one output per row, summed in storage order."""
    v = _vec(v, ds.n_features, "vector")
    rows = _rows(ds, rows)
    out = np.empty(rows.size)
    a = ds.access()

    def part(lo, hi):
        kernels.dot_rows(a.values, a.indices, a.starts, a.lengths, a.stride, a.dense,
                         v, rows, out, lo, hi)

    _run(part, _split(rows.size, workers), workers)
    return out


class _PairwiseSum:
    """Fixed-shape pairwise tree over partials pushed in order."""

    def __init__(self):
        self._stack: list[tuple[int, np.ndarray]] = []

    def push(self, vec: np.ndarray) -> None:
        level = 0
        while self._stack and self._stack[-1][0] == level:
            _, left = self._stack.pop()
            vec = left + vec
            level += 1
        self._stack.append((level, vec))

    def total(self, d: int) -> np.ndarray:
        if not self._stack:
            return np.zeros(d)
        acc = self._stack[-1][1]
        for _, left in reversed(self._stack[:-1]):
            acc = left + acc
        return acc


def matvec_transposed(ds: Dataset, a, rows=None, workers: int = 1,
                      transposed: Dataset | None = None) -> np.ndarray:
    """``X[rows].T @ a`` with ``a`` aligned to ``rows``.

    ``transposed`` may carry a ``dense-col`` copy of a dense dataset; a
    ``dense-col`` input is used directly.
    """
    rows = _rows(ds, rows)
    a = _vec(a, rows.size, "coefficient vector")
    d = ds.n_features
    col = transposed if transposed is not None else ds
    if col.layout is Layout.DENSE_COL:
        if col.n_examples != ds.n_examples or col.n_features != d:
            raise DatasetError("transposed copy does not match the dataset")
        out = np.empty(d)
        flat = col.dense.reshape(-1)
        n = col.n_examples

        def cols(lo, hi):
            kernels.col_dot(flat, n, a, rows, lo, hi, out)

        _run(cols, _split(d, workers), workers)
        return out

    acc = ds.access()
    leaves = [(lo, min(lo + LEAF_ROWS, rows.size)) for lo in range(0, rows.size, LEAF_ROWS)]
    tree = _PairwiseSum()
    wave = max(1, workers) * 2
    for start in range(0, len(leaves), wave):
        batch = leaves[start:start + wave]
        partials = [np.zeros(d) for _ in batch]

        def leaf(b, _hi, batch=batch, partials=partials):
            lo, hi = batch[b]
            kernels.scatter_rows(acc.values, acc.indices, acc.starts, acc.lengths,
                                 acc.stride, acc.dense, a, rows, lo, hi, partials[b])

        _run(leaf, [(b, b + 1) for b in range(len(batch))], workers)
        for p in partials:
            tree.push(p)
    return tree.total(d)


def elementwise(op: str, a, b=None) -> np.ndarray:
    """Pointwise ``mul``, ``div``, ``exp``, ``neg`` or ``add_scalar``.

    ``add_scalar`` takes the scalar first: ``elementwise("add_scalar", 1, a)``.
    """
    if op not in ELEMENTWISE_OPS:
        raise ValueError(f"unknown op {op!r}")
    if op == "add_scalar":
        return float(a) + np.asarray(b, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if op == "neg":
        return -a
    if op == "exp":
        return np.exp(a)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if op == "mul":
        return a * b
    if np.any(b == 0.0):
        raise ZeroDivisionError("elementwise division by zero")
    return a / b


def sigmoid(z) -> np.ndarray:
    """Fused, overflow-free ``e^z / (1 + e^z)``."""
    z = np.ascontiguousarray(z, dtype=np.float64)
    out = np.empty_like(z)
    kernels.sigmoid_vec(z, out)
    return out


def hinge_coefficients(ym, y) -> np.ndarray:
    """``-y`` where the margin ``ym`` is below 1, else 0."""
    ym = np.ascontiguousarray(ym, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if ym.shape != y.shape:
        raise ValueError("length mismatch")
    out = np.empty_like(ym)
    kernels.hinge_coef(ym, y, out)
    return out


def axpy(w, alpha: float, g) -> np.ndarray:
    """``w - alpha * g`` as a new vector."""
    w = np.asarray(w, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if w.shape != g.shape:
        raise ValueError(f"length mismatch: {w.shape} vs {g.shape}")
    return w - alpha * g


def gradient_pipeline(task, ds: Dataset, w, rows=None, workers: int = 1,
                      transposed: Dataset | None = None) -> np.ndarray:
    """Summed gradient over ``rows`` as a chain of blocking primitives.

    LR::

        a = X w;  a = y * a;  a = -a;  a = sigmoid(a);  a = a * (-y);  g = X^T a

    SVM replaces the middle steps with the hinge indicator.
    """
    rows = _rows(ds, rows)
    y = ds.labels[rows]
    a = matvec(ds, w, rows, workers)
    a = elementwise("mul", y, a)
    if Task(task) is Task.LR:
        a = elementwise("neg", a)
        a = sigmoid(a)
        a = elementwise("mul", a, elementwise("neg", y))
    else:
        a = hinge_coefficients(a, y)
    return matvec_transposed(ds, a, rows, workers, transposed)
