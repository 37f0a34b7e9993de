# cython: language_level=3
"""Compiled hot loops.

Every function here has a line-for-line twin in ``_pykernels``; the two must
round identically (sequential summation, libm ``exp``/``log1p``, no FMA).
Examples are addressed through a strided view: example ``i`` occupies
positions ``starts[i] + s*stride`` for ``s < lengths[i]``; its feature index is
``s`` for dense layouts and ``indices[pos]`` otherwise.
"""

from libc.math cimport exp, log1p
from libc.stdint cimport int64_t, uint8_t, uint64_t

cdef enum:
    LR = 0
    SVM = 1

BACKEND = "cython"


cdef inline double _sigmoid(double z) noexcept nogil:
    cdef double e
    if z >= 0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


cdef inline double _point_loss(int task, double ym) noexcept nogil:
    cdef double z, h
    if task == LR:
        z = -ym
        if z > 0:
            return z + log1p(exp(-z))
        return log1p(exp(z))
    h = 1.0 - ym
    return h if h > 0 else 0.0


def sigmoid(double z):
    return _sigmoid(z)


def point_loss_margin(int task, double ym):
    return _point_loss(task, ym)


def sigmoid_vec(const double[::1] z, double[::1] out):
    cdef Py_ssize_t i
    with nogil:
        for i in range(z.shape[0]):
            out[i] = _sigmoid(z[i])


def hinge_coef(const double[::1] ym, const double[::1] y, double[::1] out):
    cdef Py_ssize_t i
    with nogil:
        for i in range(ym.shape[0]):
            out[i] = -y[i] if ym[i] < 1.0 else 0.0


def dot_rows(const double[::1] values, const int64_t[::1] indices,
             const int64_t[::1] starts, const int64_t[::1] lengths,
             Py_ssize_t stride, bint dense, const double[::1] v,
             const int64_t[::1] rows, double[::1] out,
             Py_ssize_t lo, Py_ssize_t hi):
    cdef Py_ssize_t r, s, i, p, j
    cdef double acc
    with nogil:
        for r in range(lo, hi):
            i = rows[r]
            acc = 0.0
            p = starts[i]
            for s in range(lengths[i]):
                j = s if dense else indices[p]
                acc = acc + values[p] * v[j]
                p = p + stride
            out[r] = acc


def scatter_rows(const double[::1] values, const int64_t[::1] indices,
                 const int64_t[::1] starts, const int64_t[::1] lengths,
                 Py_ssize_t stride, bint dense, const double[::1] a,
                 const int64_t[::1] rows, Py_ssize_t lo, Py_ssize_t hi,
                 double[::1] out):
    cdef Py_ssize_t r, s, i, p, j
    cdef double c
    with nogil:
        for r in range(lo, hi):
            i = rows[r]
            c = a[r]
            p = starts[i]
            for s in range(lengths[i]):
                j = s if dense else indices[p]
                out[j] = out[j] + values[p] * c
                p = p + stride


def col_dot(const double[::1] xt, Py_ssize_t n, const double[::1] a,
            const int64_t[::1] rows, Py_ssize_t jlo, Py_ssize_t jhi,
            double[::1] out):
    cdef Py_ssize_t j, r, base
    cdef Py_ssize_t m = rows.shape[0]
    cdef double acc
    with nogil:
        for j in range(jlo, jhi):
            acc = 0.0
            base = j * n
            for r in range(m):
                acc = acc + xt[base + rows[r]] * a[r]
            out[j] = acc


def loss_sum(const double[::1] values, const int64_t[::1] indices,
             const int64_t[::1] starts, const int64_t[::1] lengths,
             Py_ssize_t stride, bint dense, const double[::1] labels,
             const double[::1] w, int task):
    cdef Py_ssize_t i, s, p, j
    cdef double acc, total = 0.0
    with nogil:
        for i in range(labels.shape[0]):
            acc = 0.0
            p = starts[i]
            for s in range(lengths[i]):
                j = s if dense else indices[p]
                acc = acc + values[p] * w[j]
                p = p + stride
            total = total + _point_loss(task, labels[i] * acc)
    return total


def hogwild_pass(const double[::1] values, const int64_t[::1] indices,
                 const int64_t[::1] starts, const int64_t[::1] lengths,
                 Py_ssize_t stride, bint dense, const double[::1] labels,
                 const int64_t[::1] order, double[::1] w, double alpha,
                 int task, Py_ssize_t worker_id, bint offsets,
                 bint example_mode, double[::1] replica, uint8_t[::1] touched):
    """Incremental SGD over ``order`` against ``w``; returns gradient evaluations.

    ``w`` may be shared with other threads running this function. No locks.
    """
    cdef Py_ssize_t q, i, s, t, p, j, length, off, base
    cdef double acc, y, coef, x
    cdef Py_ssize_t evals = 0
    with nogil:
        for q in range(order.shape[0]):
            i = order[q]
            y = labels[i]
            length = lengths[i]
            base = starts[i]
            if example_mode and not touched[i]:
                p = base
                for s in range(length):
                    j = s if dense else indices[p]
                    replica[p] = w[j]
                    p = p + stride
                touched[i] = 1
            acc = 0.0
            p = base
            for s in range(length):
                if example_mode:
                    acc = acc + values[p] * replica[p]
                else:
                    j = s if dense else indices[p]
                    acc = acc + values[p] * w[j]
                p = p + stride
            evals += 1
            if task == LR:
                coef = _sigmoid(-(y * acc)) * (-y)
            elif y * acc < 1.0:
                coef = -y
            else:
                continue
            off = worker_id % length if (offsets and length > 0) else 0
            for t in range(length):
                s = t + off
                if s >= length:
                    s = s - length
                p = base + s * stride
                j = s if dense else indices[p]
                x = values[p]
                if example_mode:
                    replica[p] = replica[p] - alpha * (coef * x)
                    w[j] = replica[p]
                else:
                    w[j] = w[j] - alpha * (coef * x)
    return evals


def pattern_writer(uint64_t[::1] bits, uint64_t pattern, Py_ssize_t sweeps):
    cdef Py_ssize_t k, j
    with nogil:
        for k in range(sweeps):
            for j in range(bits.shape[0]):
                bits[j] = pattern


def pattern_reader(const uint64_t[::1] bits, uint64_t a, uint64_t b,
                   uint64_t c, Py_ssize_t sweeps):
    """Count words holding anything other than ``a``, ``b`` or ``c``."""
    cdef Py_ssize_t k, j
    cdef uint64_t v
    cdef Py_ssize_t bad = 0
    with nogil:
        for k in range(sweeps):
            for j in range(bits.shape[0]):
                v = bits[j]
                if v != a and v != b and v != c:
                    bad += 1
    return bad
