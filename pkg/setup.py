"""Build script for the optional compiled kernel core.

The package is pure Python plus one Cython extension holding the hot
per-timestep kernels. If Cython or a C toolchain is unavailable the
extension is skipped and the numpy fallback in thicknet.backend is used
at import time. Set THICKNET_NO_EXT=1 to force a pure-Python install.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("THICKNET_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "thicknet._core",
                    ["src/thicknet/_core.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
