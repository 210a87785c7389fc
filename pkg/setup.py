"""Extension build for the compiled kernel core.

The package works without the extension: blocksim._kernels falls back to the
numpy implementation when the compiled module is absent, so a pure-Python
install (no compiler, no Cython) is still fully functional.
"""
import os

from setuptools import Extension, setup

PYX = "src/blocksim/_kernels/_core_cy.pyx"

ext_modules = []
try:
    if not os.path.exists(PYX):
        raise ImportError("pyx source not present")
    from Cython.Build import cythonize
    import numpy

    ext_modules = cythonize(
        [
            Extension(
                "blocksim._kernels._core_cy",
                [PYX],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "initializedcheck": False,
            "cdivision": True,
        },
        quiet=True,
    )
except ImportError:
    if os.environ.get("BLOCKSIM_REQUIRE_EXT"):
        raise

setup(ext_modules=ext_modules)
