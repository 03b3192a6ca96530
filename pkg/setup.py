"""Build script for the optional Cython fast path.

The package works without the extension (a NumPy fallback is selected at
import time), so a failed compile only costs speed, not functionality.
"""

from setuptools import setup

try:
    import numpy
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    ext_modules = cythonize(
        [
            Extension(
                "nightiqa._eai_fast",
                ["src/nightiqa/_eai_fast.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
