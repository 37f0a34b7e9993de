"""Pure-Python fallback for the compiled kernels in ``_kernels.pyx``.

Same signatures, same arithmetic order. Slow, but bit-for-bit compatible with
the compiled path, which is what the cross-backend tests rely on.
"""

from math import exp, log1p

LR = 0
SVM = 1

BACKEND = "python"


def sigmoid(z):
    if z >= 0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


def point_loss_margin(task, ym):
    if task == LR:
        z = -ym
        if z > 0:
            return z + log1p(exp(-z))
        return log1p(exp(z))
    h = 1.0 - ym
    return h if h > 0 else 0.0


def sigmoid_vec(z, out):
    for i, zi in enumerate(z.tolist()):
        out[i] = sigmoid(zi)


def hinge_coef(ym, y, out):
    for i, (m, yi) in enumerate(zip(ym.tolist(), y.tolist())):
        out[i] = -yi if m < 1.0 else 0.0


def dot_rows(values, indices, starts, lengths, stride, dense, v, rows, out, lo, hi):
    vals = values.tolist()
    idx = None if dense else indices.tolist()
    st = starts.tolist()
    ln = lengths.tolist()
    vv = v.tolist()
    for r in range(lo, hi):
        i = int(rows[r])
        acc = 0.0
        p = st[i]
        for s in range(ln[i]):
            j = s if dense else idx[p]
            acc = acc + vals[p] * vv[j]
            p = p + stride
        out[r] = acc


def scatter_rows(values, indices, starts, lengths, stride, dense, a, rows, lo, hi, out):
    vals = values.tolist()
    idx = None if dense else indices.tolist()
    st = starts.tolist()
    ln = lengths.tolist()
    acc = out.tolist()
    for r in range(lo, hi):
        i = int(rows[r])
        c = float(a[r])
        p = st[i]
        for s in range(ln[i]):
            j = s if dense else idx[p]
            acc[j] = acc[j] + vals[p] * c
            p = p + stride
    out[:] = acc


def col_dot(xt, n, a, rows, jlo, jhi, out):
    aa = a.tolist()
    rr = rows.tolist()
    for j in range(jlo, jhi):
        col = xt[j * n:(j + 1) * n].tolist()
        acc = 0.0
        for r, i in enumerate(rr):
            acc = acc + col[i] * aa[r]
        out[j] = acc


def loss_sum(values, indices, starts, lengths, stride, dense, labels, w, task):
    vals = values.tolist()
    idx = None if dense else indices.tolist()
    st = starts.tolist()
    ln = lengths.tolist()
    ww = w.tolist()
    total = 0.0
    for i, y in enumerate(labels.tolist()):
        acc = 0.0
        p = st[i]
        for s in range(ln[i]):
            j = s if dense else idx[p]
            acc = acc + vals[p] * ww[j]
            p = p + stride
        total = total + point_loss_margin(task, y * acc)
    return total


def hogwild_pass(values, indices, starts, lengths, stride, dense, labels, order,
                 w, alpha, task, worker_id, offsets, example_mode, replica, touched):
    # ``w`` stays a numpy array: other worker threads must see every write.
    vals = values.tolist()
    idx = None if dense else indices.tolist()
    st = starts.tolist()
    ln = lengths.tolist()
    lab = labels.tolist()
    evals = 0
    for i in order.tolist():
        y = lab[i]
        length = ln[i]
        base = st[i]
        if example_mode and not touched[i]:
            p = base
            for s in range(length):
                j = s if dense else idx[p]
                replica[p] = w[j]
                p = p + stride
            touched[i] = 1
        acc = 0.0
        p = base
        for s in range(length):
            if example_mode:
                acc = acc + vals[p] * float(replica[p])
            else:
                j = s if dense else idx[p]
                acc = acc + vals[p] * float(w[j])
            p = p + stride
        evals += 1
        if task == LR:
            coef = sigmoid(-(y * acc)) * (-y)
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
            j = s if dense else idx[p]
            x = vals[p]
            if example_mode:
                replica[p] = float(replica[p]) - alpha * (coef * x)
                w[j] = replica[p]
            else:
                w[j] = float(w[j]) - alpha * (coef * x)
    return evals


def pattern_writer(bits, pattern, sweeps):
    for _ in range(sweeps):
        for j in range(bits.shape[0]):
            bits[j] = pattern


def pattern_reader(bits, a, b, c, sweeps):
    bad = 0
    for _ in range(sweeps):
        for v in bits.tolist():
            if v != a and v != b and v != c:
                bad += 1
    return bad
