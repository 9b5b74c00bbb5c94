"""Build script for the optional compiled kernels.

The pure-numpy fallback in ``sgnet._pykernels`` is used whenever the
extension is missing, so a failed compile is not fatal.
"""
import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("SGN_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "sgnet._ckernels",
                [os.path.join("src", "sgnet", "_ckernels.pyx")],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

setup(ext_modules=ext_modules)
