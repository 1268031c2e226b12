"""Build script: compiles the optional Cython stepping core.

The package works without the extension (a pure-numpy backend is selected at
import time); the extension is only a speedup for the hot particle loops.
"""

import sys

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "gtpde.kernels._core",
                ["src/gtpde/kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - build-env dependent
    sys.stderr.write(
        "gtpde: skipping compiled kernels (%s); pure-python backend will be used\n" % exc
    )

setup(ext_modules=ext_modules)
