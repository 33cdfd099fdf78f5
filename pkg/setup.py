"""Build script for the optional compiled kernel core.

The package works without the extension (a numpy fallback is selected at
import time); building it speeds up the attention/scan hot path and gives
cleaner microbenchmark scaling at small sizes.
"""

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "bottomup.kernels._fast",
                ["src/bottomup/kernels/_fast.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
else:
    ext_modules = []

setup(ext_modules=ext_modules)
