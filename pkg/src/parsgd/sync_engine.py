"""Synchronous (mini-)batch SGD built from the blocking linalg primitives.

Each step computes the full mini-batch gradient, waits for it, then applies a
single model update; no worker ever reads a half-updated model. Because every
primitive is deterministic in the worker count, so is the whole trajectory.
"""

from __future__ import annotations

import math
import time

import numpy as np

from . import linalg
from .dataset import Dataset, Layout, convert_layout
from .glm import (
    Hyperparams,
    LossTrace,
    Task,
    check_finite,
    check_model,
    dataset_loss,
    zero_model,
)


def _prepared(ds: Dataset):
    """Row-major data for ``X w`` plus, for dense data, a column-major copy."""
    if ds.layout.is_dense:
        return convert_layout(ds, Layout.DENSE_ROW), convert_layout(ds, Layout.DENSE_COL)
    return ds, None


def epoch_batch(task, ds: Dataset, w, alpha: float, workers: int = 1,
                transposed: Dataset | None = None):
    """One full-batch epoch: exact gradient over all examples, one update.

    Returns the new model and the gradient's Euclidean norm.
    """
    w = check_model(w, ds.n_features)
    if ds.n_examples == 0:
        raise ValueError("cannot train on an empty dataset")
    if transposed is None and ds.layout.is_dense:
        ds, transposed = _prepared(ds)
    g = linalg.gradient_pipeline(task, ds, w, None, workers, transposed)
    if not np.all(np.isfinite(g)):
        raise ArithmeticError("non-finite gradient; lower the step size")
    return linalg.axpy(w, alpha, g), float(np.linalg.norm(g))


def train(task, ds: Dataset, hyper: Hyperparams, seed: int | None = 0, workers: int = 1,
          w0=None, shuffle: bool = True, clock=time.perf_counter, should_stop=None):
    """Mini-batch SGD for ``hyper.epochs`` epochs.

    Each epoch walks a seeded permutation in ``ceil(N/B)`` mini-batches
    (sampling without replacement); ``B = N`` keeps id order and is exactly
    :func:`epoch_batch`. The loss is evaluated after every epoch, outside the
    timed region.

    Raises :class:`~parsgd.glm.DivergenceError` with the partial trace if the
    model or loss stops being finite. ``should_stop(trace)`` is consulted
    after every epoch and ends training early when it returns true.
    """
    task = Task(task)
    n = ds.n_examples
    B = hyper.batch_size(n)
    w = zero_model(ds.n_features) if w0 is None else check_model(w0, ds.n_features).copy()
    rowmajor, transposed = _prepared(ds)
    rng = np.random.default_rng(seed)
    trace = LossTrace(dataset_loss(task, ds, w))
    steps = math.ceil(n / B)
    for epoch in range(hyper.epochs):
        alpha = hyper.step(epoch)
        order = rng.permutation(n) if (shuffle and B < n) else np.arange(n)
        t0 = clock()
        with np.errstate(over="ignore", invalid="ignore"):
            for s in range(steps):
                rows = order[s * B:(s + 1) * B]
                g = linalg.gradient_pipeline(task, rowmajor, w, rows, workers, transposed)
                w = linalg.axpy(w, alpha, g)
        elapsed = clock() - t0
        loss = dataset_loss(task, ds, w) if np.all(np.isfinite(w)) else math.inf
        trace.record(loss, elapsed, n)
        check_finite(w, loss, epoch + 1, trace)
        if should_stop is not None and should_stop(trace):
            break
    return w, trace
