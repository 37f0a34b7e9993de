"""Synthetic datasets shaped like the usual benchmark data, at desk scale."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, Layout, convert_layout, from_csr, from_dense
from .glm import LossTrace

#: Shapes of the standard benchmark sets: (examples, features, average nnz).
BENCHMARK_SHAPES = {
    "covtype": (581_012, 54, 54.0),
    "w8a": (64_700, 300, 11.65),
    "real-sim": (72_309, 20_958, 51.30),
    "rcv1": (677_399, 47_236, 73.16),
    "news": (19_996, 1_355_191, 454.99),
}


def _logistic_labels(margins: np.ndarray, rng) -> np.ndarray:
    p = 1.0 / (1.0 + np.exp(-margins))
    return np.where(rng.random(margins.shape[0]) < p, 1.0, -1.0)


def dense_fixture(n: int = 2048, d: int = 54, seed: int = 0, signal: float = 3.0,
                  layout: Layout | str = Layout.DENSE_ROW) -> Dataset:
    """Standardized Gaussian features, labels drawn from a logistic model."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    w_true = rng.standard_normal(d) * signal / np.sqrt(d)
    return from_dense(X / np.sqrt(d), _logistic_labels(X @ w_true, rng), layout)


def power_law_nnz(n: int, avg: float, max_nnz: int, rng, exponent: float = 2.5) -> np.ndarray:
    """Per-example nonzero counts with a Pareto tail, mean close to ``avg``."""
    shape = exponent - 1.0
    raw = rng.pareto(shape, n) + 1.0
    scale = avg * (shape - 1.0) / shape if shape > 1 else avg / 3.0
    for _ in range(30):
        counts = np.clip(np.rint(raw * scale), 1, max_nnz)
        mean = counts.mean()
        if abs(mean - avg) <= 0.005 * avg:
            break
        scale *= avg / mean
    return counts.astype(np.int64)


def sparse_fixture(n: int = 20_000, d: int = 10_000, avg_nnz: float = 50.0, seed: int = 0,
                   signal: float = 1.0, copies: int = 8,
                   layout: Layout | str = Layout.CSR) -> Dataset:
    """High-dimensional sparse data with a finite logistic optimum.

    ``n / copies`` distinct sparse vectors (power-law row lengths, uniform
    features, unit-norm positive rows) each appear ``copies`` times in shuffled
    order, with labels drawn independently from a logistic model. Repeated rows
    with disagreeing labels keep the data from being separable, which it would
    almost surely be with ``n`` this close to ``d``.
    """
    if copies < 1 or n % copies:
        raise ValueError("n must be a positive multiple of copies")
    rng = np.random.default_rng(seed)
    protos = n // copies
    counts = power_law_nnz(protos, avg_nnz, min(d, int(20 * avg_nnz)), rng)
    p_idx = [np.sort(rng.choice(d, c, replace=False)) for c in counts]
    p_val = []
    for c in counts:
        v = rng.uniform(0.5, 1.5, c)
        p_val.append(v / np.linalg.norm(v))
    w_true = rng.standard_normal(d) * signal
    which = rng.permutation(np.repeat(np.arange(protos), copies))
    lengths = counts[which]
    indptr = np.concatenate(([0], np.cumsum(lengths))).astype(np.int64)
    indices = np.concatenate([p_idx[g] for g in which]).astype(np.int64)
    values = np.concatenate([p_val[g] for g in which])
    margins = np.add.reduceat(values * w_true[indices], indptr[:-1])
    ds = from_csr(indptr, indices, values, _logistic_labels(margins, rng), d)
    return convert_layout(ds, layout)


def separable_fixture(n: int = 200, d: int = 5, seed: int = 0, gap: float = 1.0) -> Dataset:
    """Linearly separable dense data through the origin with margin ``gap``."""
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    X = rng.standard_normal((n, d))
    X -= np.outer(X @ u, u)
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    X += np.outer(y * (gap + rng.random(n)), u)
    return from_dense(X, y)


@dataclass
class LeastSquaresToy:
    """``f(w) = 1/2 ||A w - b||^2``; batch gradient descent is stable iff
    ``alpha < 2 / L`` with ``L`` the largest eigenvalue of ``A^T A``."""

    A: np.ndarray
    b: np.ndarray

    @classmethod
    def make(cls, n: int = 40, d: int = 4, seed: int = 0, scale: float = 1.0):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((n, d)) * scale
        b = A @ rng.standard_normal(d) + 0.5 * rng.standard_normal(n)
        return cls(A, b)

    @property
    def lipschitz(self) -> float:
        return float(np.linalg.eigvalsh(self.A.T @ self.A)[-1])

    @property
    def stability_bound(self) -> float:
        return 2.0 / self.lipschitz

    def loss(self, w) -> float:
        r = self.A @ w - self.b
        return 0.5 * float(r @ r)

    @property
    def optimal_loss(self) -> float:
        w, *_ = np.linalg.lstsq(self.A, self.b, rcond=None)
        return self.loss(w)

    def train(self, alpha: float, epochs: int, clock=time.perf_counter) -> LossTrace:
        w = np.zeros(self.A.shape[1])
        trace = LossTrace(self.loss(w))
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(epochs):
                t0 = clock()
                w = w - alpha * (self.A.T @ (self.A @ w - self.b))
                dt = clock() - t0
                loss = self.loss(w)
                trace.record(loss if np.isfinite(loss) else np.inf, dt)
                if not np.isfinite(loss):
                    break
        return trace
