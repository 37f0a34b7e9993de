"""Pick the kernel backend once, at import time.

The compiled extension is used when it imports; ``PARSGD_PURE_PYTHON=1`` forces
the fallback (handy for debugging and for the backend benchmark).
"""

import os
import warnings

from . import _pykernels

if os.environ.get("PARSGD_PURE_PYTHON", "") not in ("", "0"):
    kernels = _pykernels
else:
    try:
        from . import _kernels as kernels
    except ImportError:  # extension not built
        warnings.warn(
            "parsgd compiled kernels unavailable; using the pure-Python fallback",
            RuntimeWarning,
            stacklevel=2,
        )
        kernels = _pykernels

BACKEND = kernels.BACKEND


def available_backends():
    """Kernel modules importable in this environment, compiled first."""
    out = []
    try:
        from . import _kernels

        out.append(_kernels)
    except ImportError:
        pass
    out.append(_pykernels)
    return out
