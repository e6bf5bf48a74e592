"""Build script for the compiled kernel extension.

Project metadata lives in ``pyproject.toml``.  The extension is optional at
runtime: when it is missing the package falls back to the pure-Python kernels.
"""
import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "uphes._kernels._ckernels",
        sources=["src/uphes/_kernels/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        # no fused multiply-add, so results match the Python fallback bitwise
        extra_compile_args=["-O3", "-ffp-contract=off", "-fno-fast-math"],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
