import os

import numpy as np
from setuptools import Extension, setup

# PARSGD_NO_EXT=1 installs the pure-Python fallback only.
ext_modules = []
if not os.environ.get("PARSGD_NO_EXT"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "parsgd._kernels",
                ["src/parsgd/_kernels.pyx"],
                include_dirs=[np.get_include()],
                # no FMA contraction: kernels must round exactly like the fallback
                extra_compile_args=["-O3", "-ffp-contract=off", "-fno-fast-math"],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )

setup(ext_modules=ext_modules)
