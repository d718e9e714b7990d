"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a numpy fallback is selected at
import time), so any build failure here downgrades to a pure-Python install
instead of aborting.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/scriptorium/_kernels.pyx",
        compiler_directives={"language_level": "3"},
    )
    include_dirs = [np.get_include()]
except Exception as exc:  # Cython or compiler missing: install pure-Python
    print(f"scriptorium: skipping compiled kernels ({exc})", file=sys.stderr)
    include_dirs = []

setup(ext_modules=ext_modules, include_dirs=include_dirs)
