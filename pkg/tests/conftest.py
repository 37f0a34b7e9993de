import numpy as np
import pytest

from parsgd import _pykernels, async_engine, glm, linalg, simd_sim
from parsgd.dataset import Layout, convert_layout, from_dense

try:
    from parsgd import _kernels
except ImportError:  # built without the extension
    _kernels = None

BACKENDS = [pytest.param(_pykernels, id="python")]
if _kernels is not None:
    BACKENDS.insert(0, pytest.param(_kernels, id="cython"))

_USERS = (glm, linalg, async_engine, simd_sim)


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run the test against each kernel implementation."""
    for mod in _USERS:
        monkeypatch.setattr(mod, "kernels", request.param)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_sparse(rng, n, d, density=0.3, layout=Layout.CSR):
    X = rng.standard_normal((n, d)) * (rng.random((n, d)) < density)
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    return X, convert_layout(from_dense(X, y), layout)


def algorithm3(task, ds, w, alpha, order=None):
    """Plain sequential incremental epoch, one coordinate update at a time."""
    w = np.array(w, dtype=np.float64)
    ids = range(ds.n_examples) if order is None else order
    for i in ids:
        idx, val = ds.row(int(i))
        idx, g = glm.point_gradient(task, w, (idx, val), ds.labels[i])
        for j, gv in zip(idx.tolist(), g.tolist()):
            w[j] = w[j] - alpha * gv
    return w
