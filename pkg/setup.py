"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a numpy fallback is selected at
import time); set QTUNE_SKIP_EXTENSION=1 to force a pure-Python build.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("QTUNE_SKIP_EXTENSION") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "qtune._kernels._core",
                    ["src/qtune/_kernels/_core.pyx"],
                    include_dirs=[numpy.get_include()],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
