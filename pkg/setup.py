"""Build script: compiles the Cython metric kernels when Cython is available.

The package works without the extension; rallynet.metrics falls back to the
pure-numpy reference kernels at import time.
"""

from setuptools import setup

try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/rallynet/metrics/_kernels.pyx"],
        language_level=3,
    )
    include_dirs = [numpy.get_include()]
except ImportError:
    ext_modules = []
    include_dirs = []

setup(ext_modules=ext_modules, include_dirs=include_dirs)
