"""Compiled kernels vs the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--n 2000] [--d 500]

Times one Hogwild pass, one row matvec and one loss evaluation per backend on
the same CSR and dense-row data, and checks the results agree bitwise.
"""

import argparse
import time

import numpy as np

from parsgd import _backend
from parsgd.dataset import Layout
from parsgd.fixtures import dense_fixture, sparse_fixture


def _best(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench(ds, kern, repeat):
    a = ds.access()
    args = (a.values, a.indices, a.starts, a.lengths, a.stride, a.dense)
    n, d = ds.n_examples, ds.n_features
    rows = np.arange(n, dtype=np.int64)
    rng = np.random.default_rng(0)
    v = rng.standard_normal(d)

    def hogwild():
        w = np.zeros(d)
        kern.hogwild_pass(*args, ds.labels, rows, w, 0.1, 0, 0, False, False,
                          np.zeros(a.values.shape[0]), np.zeros(n, dtype=np.uint8))
        return w

    def matvec():
        out = np.empty(n)
        kern.dot_rows(*args, v, rows, out, 0, n)
        return out

    def loss():
        return kern.loss_sum(*args, ds.labels, v, 0)

    return {name: _best(fn, repeat) for name, fn in
            (("hogwild_pass", hogwild), ("dot_rows", matvec), ("loss_sum", loss))}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--d", type=int, default=500)
    args = ap.parse_args()

    backends = _backend.available_backends()
    if len(backends) < 2:
        print("compiled extension not built; only the fallback is available")
    data = {
        "dense-row": dense_fixture(n=args.n, d=min(args.d, 200)),
        "csr": sparse_fixture(n=args.n, d=args.d, avg_nnz=20, layout=Layout.CSR),
    }
    print(f"{'data':<10} {'kernel':<13} " + " ".join(f"{k.BACKEND:>12}" for k in backends)
          + ("     speedup" if len(backends) > 1 else ""))
    for label, ds in data.items():
        results = [bench(ds, k, args.repeat) for k in backends]
        for name in results[0]:
            times = [r[name][0] for r in results]
            outs = [r[name][1] for r in results]
            same = all(np.array_equal(outs[0], o) for o in outs[1:])
            line = f"{label:<10} {name:<13} " + " ".join(f"{1e3 * t:10.2f}ms" for t in times)
            if len(times) > 1:
                line += f" {times[-1] / times[0]:10.1f}x"
            print(line + ("" if same else "  MISMATCH"))


if __name__ == "__main__":
    main()
