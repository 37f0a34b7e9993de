"""Training data: LIBSVM ingestion, physical layouts, and worker assignment.

Four layouts are supported:

``dense-row``
    ``dense`` has shape ``(n, d)``, one example per row.
``dense-col``
    ``dense`` has shape ``(d, n)``; feature ``j`` of all examples is contiguous.
``csr``
    ``indptr`` (n+1), ``indices``, ``values``; indices ascending within a row.
``padded``
    ``pad_indices`` / ``pad_values`` of shape ``(width, n)`` stored slot-major,
    so slot ``s`` of consecutive examples is contiguous. Slots past an
    example's ``pad_nnz`` hold index ``d`` and value 0.

Every layout exposes the same strided view (:class:`Access`) to the kernels.
"""

from __future__ import annotations

import enum
import hashlib
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, TextIO

import numpy as np

#: Densification refuses above this many matrix entries (2 GiB of float64).
MAX_DENSE_ENTRIES = 1 << 28


class Layout(str, enum.Enum):
    DENSE_ROW = "dense-row"
    DENSE_COL = "dense-col"
    CSR = "csr"
    PADDED = "padded"

    @property
    def is_dense(self) -> bool:
        return self in (Layout.DENSE_ROW, Layout.DENSE_COL)

    @property
    def column_major(self) -> bool:
        return self in (Layout.DENSE_COL, Layout.PADDED)


class DatasetError(ValueError):
    pass


class LibsvmError(DatasetError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ParseError(LibsvmError):
    """Malformed LIBSVM line."""


class BoundsError(LibsvmError):
    """Feature index outside the declared dimensionality."""


class FormatError(LibsvmError):
    """Feature indices not strictly increasing within a line."""


class CapacityError(DatasetError):
    """Refusal to densify data that would not fit."""


class Access(NamedTuple):
    values: np.ndarray
    indices: np.ndarray
    starts: np.ndarray
    lengths: np.ndarray
    stride: int
    dense: bool


_EMPTY_I64 = np.zeros(0, dtype=np.int64)


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable labeled examples in one physical layout."""

    n_features: int
    labels: np.ndarray
    layout: Layout
    dense: np.ndarray | None = None
    indptr: np.ndarray | None = None
    indices: np.ndarray | None = None
    values: np.ndarray | None = None
    pad_indices: np.ndarray | None = None
    pad_values: np.ndarray | None = None
    pad_nnz: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        lab = _frozen(self.labels, np.float64)
        object.__setattr__(self, "labels", lab)
        if lab.size and not np.all((lab == 1.0) | (lab == -1.0)):
            raise DatasetError("labels must be +1 or -1")
        object.__setattr__(self, "layout", Layout(self.layout))
        n, d = lab.shape[0], int(self.n_features)
        if d < 0:
            raise DatasetError("n_features must be nonnegative")
        if self.layout.is_dense:
            shape = (n, d) if self.layout is Layout.DENSE_ROW else (d, n)
            arr = _frozen(self.dense, np.float64)
            if arr.shape != shape:
                raise DatasetError(f"dense array has shape {arr.shape}, expected {shape}")
            object.__setattr__(self, "dense", arr)
        elif self.layout is Layout.CSR:
            indptr = _frozen(self.indptr, np.int64)
            indices = _frozen(self.indices, np.int64)
            values = _frozen(self.values, np.float64)
            if indptr.shape != (n + 1,) or indptr[0] != 0:
                raise DatasetError("CSR row offsets must have length n+1 and start at 0")
            if np.any(np.diff(indptr) < 0) or indptr[-1] != indices.size:
                raise DatasetError("CSR row offsets must be nondecreasing and end at nnz")
            if indices.size != values.size:
                raise DatasetError("CSR indices and values differ in length")
            if indices.size and (indices.min() < 0 or indices.max() >= d):
                raise DatasetError("feature index out of range")
            object.__setattr__(self, "indptr", indptr)
            object.__setattr__(self, "indices", indices)
            object.__setattr__(self, "values", values)
        else:
            pi = _frozen(self.pad_indices, np.int64)
            pv = _frozen(self.pad_values, np.float64)
            nnz = _frozen(self.pad_nnz, np.int64)
            width = int(nnz.max()) if n else 0
            if pi.shape != (width, n) or pv.shape != (width, n):
                raise DatasetError("padded arrays must have shape (max nnz, n)")
            slot = np.arange(width)[:, None]
            pad = slot >= nnz[None, :]
            if np.any(pi[pad] != d) or np.any(pv[pad] != 0.0):
                raise DatasetError("padding slots must carry index d and value 0")
            if np.any((pi[~pad] < 0) | (pi[~pad] >= d)):
                raise DatasetError("feature index out of range")
            object.__setattr__(self, "pad_indices", pi)
            object.__setattr__(self, "pad_values", pv)
            object.__setattr__(self, "pad_nnz", nnz)

    @property
    def n_examples(self) -> int:
        return int(self.labels.shape[0])

    @property
    def width(self) -> int:
        """Padded width (max nonzeros per example); only for ``padded``."""
        if self.layout is not Layout.PADDED:
            raise DatasetError("width is defined for the padded layout only")
        return int(self.pad_values.shape[0])

    @property
    def nnz(self) -> int:
        if self.layout is Layout.CSR:
            return int(self.indices.size)
        if self.layout is Layout.PADDED:
            return int(self.pad_nnz.sum())
        return int(np.count_nonzero(self.dense))

    def access(self) -> Access:
        """Strided view consumed by the kernels."""
        acc = self._cache.get("access")
        if acc is not None:
            return acc
        n, d = self.n_examples, self.n_features
        ar = np.arange(n, dtype=np.int64)
        if self.layout is Layout.DENSE_ROW:
            acc = Access(self.dense.reshape(-1), _EMPTY_I64, ar * d,
                         np.full(n, d, dtype=np.int64), 1, True)
        elif self.layout is Layout.DENSE_COL:
            acc = Access(self.dense.reshape(-1), _EMPTY_I64, ar,
                         np.full(n, d, dtype=np.int64), n, True)
        elif self.layout is Layout.CSR:
            acc = Access(self.values, self.indices, np.ascontiguousarray(self.indptr[:-1]),
                         np.diff(self.indptr), 1, False)
        else:
            acc = Access(self.pad_values.reshape(-1), self.pad_indices.reshape(-1), ar,
                         self.pad_nnz, n, False)
        self._cache["access"] = acc
        return acc

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Stored ``(indices, values)`` of example ``i`` (dense: all ``d``)."""
        if self.layout is Layout.DENSE_ROW:
            return np.arange(self.n_features), self.dense[i]
        if self.layout is Layout.DENSE_COL:
            return np.arange(self.n_features), self.dense[:, i]
        if self.layout is Layout.CSR:
            lo, hi = self.indptr[i], self.indptr[i + 1]
            return self.indices[lo:hi], self.values[lo:hi]
        k = self.pad_nnz[i]
        return self.pad_indices[:k, i], self.pad_values[:k, i]

    def canonical(self) -> list[tuple[tuple[int, float], ...]]:
        """Per-example sorted ``(index, value)`` pairs, explicit zeros dropped."""
        out = []
        for i in range(self.n_examples):
            idx, val = self.row(i)
            keep = val != 0.0
            pairs = sorted(zip(idx[keep].tolist(), val[keep].tolist()))
            out.append(tuple(pairs))
        return out

    def same_content(self, other: "Dataset") -> bool:
        return (
            self.n_features == other.n_features
            and np.array_equal(self.labels, other.labels)
            and self.canonical() == other.canonical()
        )

    def fingerprint(self) -> str:
        fp = self._cache.get("fingerprint")
        if fp is None:
            h = hashlib.sha1()
            h.update(f"{self.n_features}".encode())
            h.update(self.labels.tobytes())
            csr = self if self.layout is Layout.CSR else convert_layout(self, Layout.CSR)
            h.update(csr.indptr.tobytes())
            h.update(csr.indices.tobytes())
            h.update(csr.values.tobytes())
            fp = h.hexdigest()
            self._cache["fingerprint"] = fp
        return fp

    def take(self, ids) -> "Dataset":
        """New dataset of the examples ``ids`` in that order, same layout."""
        ids = np.asarray(ids, dtype=np.int64)
        y = self.labels[ids]
        if self.layout is Layout.DENSE_ROW:
            return Dataset(self.n_features, y, self.layout, dense=self.dense[ids])
        if self.layout is Layout.DENSE_COL:
            return Dataset(self.n_features, y, self.layout, dense=self.dense[:, ids])
        csr = self if self.layout is Layout.CSR else convert_layout(self, Layout.CSR)
        lens = np.diff(csr.indptr)[ids]
        indptr = np.concatenate(([0], np.cumsum(lens))).astype(np.int64)
        sel = np.concatenate([np.arange(csr.indptr[i], csr.indptr[i + 1]) for i in ids]) \
            if ids.size else _EMPTY_I64
        sub = Dataset(self.n_features, y, Layout.CSR, indptr=indptr,
                      indices=csr.indices[sel], values=csr.values[sel])
        return sub if self.layout is Layout.CSR else convert_layout(sub, self.layout)

    def __repr__(self):
        return (f"Dataset(n={self.n_examples}, d={self.n_features}, "
                f"layout={self.layout.value}, nnz={self.nnz})")


def from_dense(X, y, layout: Layout | str = Layout.DENSE_ROW) -> Dataset:
    """Build from a logical ``(n, d)`` matrix."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DatasetError("expected a 2-D matrix")
    ds = Dataset(X.shape[1], np.asarray(y, dtype=np.float64), Layout.DENSE_ROW, dense=X)
    return convert_layout(ds, layout)


def from_csr(indptr, indices, values, y, n_features: int) -> Dataset:
    return Dataset(int(n_features), np.asarray(y, dtype=np.float64), Layout.CSR,
                   indptr=indptr, indices=indices, values=values)


# -- LIBSVM -----------------------------------------------------------------


def _normalize_labels(raw: list[float]) -> np.ndarray:
    # {1,2}-coded binary data: 2 is the negative class. Otherwise sign decides.
    distinct = set(raw)
    if distinct and distinct <= {1.0, 2.0} and 2.0 in distinct:
        return np.array([1.0 if r == 1.0 else -1.0 for r in raw])
    return np.array([1.0 if r > 0 else -1.0 for r in raw], dtype=np.float64)


def parse_libsvm(stream: TextIO | Iterable[str] | str, declared_d: int | None = None,
                 append_bias: bool = False) -> Dataset:
    """Parse LIBSVM text (``label idx:val ...``, 1-based indices) into CSR.

    Labels become +1/-1: nonpositive labels and the ``2`` of {1,2}-coded files
    map to -1. With ``append_bias`` a constant-1 feature is appended as the
    last column.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    raw_labels: list[float] = []
    indptr = [0]
    indices: list[int] = []
    values: list[float] = []
    max_idx = -1
    for lineno, line in enumerate(stream, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            raw_labels.append(float(tokens[0]))
        except ValueError:
            raise ParseError(f"bad label {tokens[0]!r}", lineno) from None
        prev = -1
        for tok in tokens[1:]:
            key, sep, val = tok.partition(":")
            if not sep:
                raise ParseError(f"expected idx:val, got {tok!r}", lineno)
            if key == "qid":
                continue
            try:
                j = int(key) - 1
                v = float(val)
            except ValueError:
                raise ParseError(f"bad feature {tok!r}", lineno) from None
            if j < 0:
                raise ParseError(f"feature indices are 1-based, got {key}", lineno)
            if j <= prev:
                raise FormatError(f"index {key} not strictly increasing", lineno)
            if declared_d is not None and j >= declared_d:
                raise BoundsError(f"index {key} exceeds declared dimension {declared_d}",
                                  lineno)
            prev = j
            indices.append(j)
            values.append(v)
        max_idx = max(max_idx, prev)
        indptr.append(len(indices))
    d = declared_d if declared_d is not None else max_idx + 1
    labels = _normalize_labels(raw_labels)
    indptr_a = np.array(indptr, dtype=np.int64)
    indices_a = np.array(indices, dtype=np.int64)
    values_a = np.array(values, dtype=np.float64)
    if append_bias:
        n = len(raw_labels)
        lens = np.diff(indptr_a) + 1
        new_ptr = np.concatenate(([0], np.cumsum(lens))).astype(np.int64)
        new_idx = np.empty(new_ptr[-1], dtype=np.int64)
        new_val = np.empty(new_ptr[-1], dtype=np.float64)
        for i in range(n):
            lo, hi = indptr_a[i], indptr_a[i + 1]
            a, b = new_ptr[i], new_ptr[i + 1]
            new_idx[a:b - 1] = indices_a[lo:hi]
            new_val[a:b - 1] = values_a[lo:hi]
            new_idx[b - 1] = d
            new_val[b - 1] = 1.0
        indptr_a, indices_a, values_a, d = new_ptr, new_idx, new_val, d + 1
    return from_csr(indptr_a, indices_a, values_a, labels, d)


def serialize_libsvm(ds: Dataset) -> str:
    """LIBSVM text with 1-based indices and 17-significant-digit values."""
    csr = ds if ds.layout is Layout.CSR else convert_layout(ds, Layout.CSR)
    lines = []
    for i in range(csr.n_examples):
        idx, val = csr.row(i)
        feats = " ".join(f"{j + 1}:{v:.17g}" for j, v in zip(idx.tolist(), val.tolist()))
        label = "+1" if csr.labels[i] > 0 else "-1"
        lines.append(f"{label} {feats}".rstrip())
    return "\n".join(lines) + ("\n" if lines else "")


def load_libsvm(path, declared_d: int | None = None, append_bias: bool = False) -> Dataset:
    with open(path) as fh:
        return parse_libsvm(fh, declared_d, append_bias)


def save_cache(ds: Dataset, path) -> None:
    """Binary cache (``.npz``); reloads bit-exactly."""
    arrays = {"labels": ds.labels, "n_features": np.array(ds.n_features),
              "layout": np.array(ds.layout.value)}
    for name in ("dense", "indptr", "indices", "values", "pad_indices", "pad_values",
                 "pad_nnz"):
        a = getattr(ds, name)
        if a is not None:
            arrays[name] = a
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_cache(path) -> Dataset:
    with np.load(path, allow_pickle=False) as z:
        kw = {k: z[k] for k in z.files if k not in ("labels", "n_features", "layout")}
        return Dataset(int(z["n_features"]), z["labels"], Layout(str(z["layout"])), **kw)


def load(path, layout: Layout | str | None = None, declared_d: int | None = None,
         append_bias: bool = False) -> Dataset:
    """Load a LIBSVM file or ``.npz`` cache, optionally converting the layout."""
    path = str(path)
    ds = load_cache(path) if path.endswith(".npz") else load_libsvm(path, declared_d,
                                                                    append_bias)
    return ds if layout is None else convert_layout(ds, layout)


# -- layouts ----------------------------------------------------------------


def _check_capacity(n: int, d: int, limit: int) -> None:
    if n * d > limit:
        raise CapacityError(
            f"dense {n}x{d} matrix needs {n * d} entries, above the limit of {limit}")


def _to_csr(ds: Dataset) -> Dataset:
    if ds.layout is Layout.CSR:
        return ds
    if ds.layout.is_dense:
        X = ds.dense if ds.layout is Layout.DENSE_ROW else ds.dense.T
        mask = X != 0.0
        indptr = np.concatenate(([0], np.cumsum(mask.sum(axis=1)))).astype(np.int64)
        rows, cols = np.nonzero(mask)
        return from_csr(indptr, cols, X[rows, cols], ds.labels, ds.n_features)
    nnz = ds.pad_nnz
    indptr = np.concatenate(([0], np.cumsum(nnz))).astype(np.int64)
    slot = np.arange(ds.pad_values.shape[0])[:, None]
    live = (slot < nnz[None, :]).T  # (n, width), row-major walk = per-example order
    return from_csr(indptr, ds.pad_indices.T[live], ds.pad_values.T[live], ds.labels,
                    ds.n_features)


def convert_layout(ds: Dataset, target: Layout | str,
                   max_dense_entries: int = MAX_DENSE_ENTRIES) -> Dataset:
    """Re-materialize ``ds`` in ``target`` layout; content is preserved."""
    target = Layout(target)
    if ds.layout is target:
        return ds
    n, d = ds.n_examples, ds.n_features
    if target.is_dense:
        if ds.layout.is_dense:
            return transpose_dense(ds) if target is Layout.DENSE_COL else Dataset(
                d, ds.labels, Layout.DENSE_ROW, dense=np.ascontiguousarray(ds.dense.T))
        _check_capacity(n, d, max_dense_entries)
        csr = _to_csr(ds)
        X = np.zeros((n, d))
        rows = np.repeat(np.arange(n), np.diff(csr.indptr))
        X[rows, csr.indices] = csr.values
        out = Dataset(d, ds.labels, Layout.DENSE_ROW, dense=X)
        return out if target is Layout.DENSE_ROW else transpose_dense(out)
    csr = _to_csr(ds)
    if target is Layout.CSR:
        return csr
    nnz = np.diff(csr.indptr)
    width = int(nnz.max()) if n else 0
    pi = np.full((width, n), d, dtype=np.int64)
    pv = np.zeros((width, n))
    rows = np.repeat(np.arange(n), nnz)
    slots = np.arange(csr.indices.size) - np.repeat(csr.indptr[:-1], nnz)
    pi[slots, rows] = csr.indices
    pv[slots, rows] = csr.values
    return Dataset(d, ds.labels, Layout.PADDED, pad_indices=pi, pad_values=pv, pad_nnz=nnz)


def transpose_dense(ds: Dataset) -> Dataset:
    """Materialize the column-major copy of a ``dense-row`` dataset."""
    if ds.layout is not Layout.DENSE_ROW:
        raise DatasetError("transpose_dense expects the dense-row layout")
    return Dataset(ds.n_features, ds.labels, Layout.DENSE_COL,
                   dense=np.ascontiguousarray(ds.dense.T))


def logical_matrix(ds: Dataset) -> np.ndarray:
    """The ``(n, d)`` matrix a dense dataset represents (a view, no copy)."""
    if ds.layout is Layout.DENSE_ROW:
        return ds.dense
    if ds.layout is Layout.DENSE_COL:
        return ds.dense.T
    raise DatasetError("logical_matrix needs a dense layout")


# -- worker assignment ------------------------------------------------------


class Strategy(str, enum.Enum):
    ROUND_ROBIN = "rr"
    CHUNK = "ch"


@dataclass(frozen=True)
class Assignment:
    worker_count: int
    strategy: Strategy
    replication_k: int
    lists: tuple[np.ndarray, ...]

    def __getitem__(self, worker: int) -> np.ndarray:
        return self.lists[worker]

    @property
    def total(self) -> int:
        return sum(int(a.size) for a in self.lists)


def assign(n: int, workers: int, strategy: Strategy | str = Strategy.CHUNK,
           k: int = 0) -> Assignment:
    """Split example ids ``0..n-1`` over ``workers``.

    Chunking gives worker ``i`` the range ``[i*c, min((i+1)*c, n))`` with
    ``c = ceil(n/workers)``; round-robin gives it ``i, i+T, i+2T, ...``. With
    ``k > 0`` every worker also takes the ``k`` ids that follow its boundary
    (one past its last id), wrapping modulo ``n``.
    """
    strategy = Strategy(strategy)
    if workers < 1 or n < 1 or k < 0:
        raise ValueError("need workers >= 1, n >= 1, k >= 0")
    if workers > n:
        warnings.warn(f"{workers} workers for {n} examples: some workers idle",
                      RuntimeWarning, stacklevel=2)
    lists = []
    chunk = math.ceil(n / workers)
    for i in range(workers):
        if strategy is Strategy.CHUNK:
            lo, hi = min(i * chunk, n), min((i + 1) * chunk, n)
            base = np.arange(lo, hi, dtype=np.int64)
            boundary = hi
        else:
            base = np.arange(i, n, workers, dtype=np.int64)
            boundary = int(base[-1]) + 1 if base.size else i
        if k:
            extra = (boundary + np.arange(k, dtype=np.int64)) % n
            base = np.concatenate((base, extra))
        lists.append(base)
    return Assignment(workers, strategy, k, tuple(lists))
