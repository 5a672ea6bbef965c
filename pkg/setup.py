"""Build script: compiles the coordinate-descent kernels when Cython and a C
compiler are available.  The package works without the extension (a NumPy
fallback is selected at import time), so any build failure here is non-fatal.
"""
import os
import sys

from setuptools import setup

ext_modules = []
if not os.environ.get("CHANGEPLANE_SKIP_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "changeplane._kernels",
                    [os.path.join("src", "changeplane", "_kernels.pyx")],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except Exception as exc:  # pragma: no cover - build environment dependent
        print(f"changeplane: skipping compiled kernels ({exc})", file=sys.stderr)
        ext_modules = []

setup(ext_modules=ext_modules)
