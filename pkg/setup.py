"""Build script: compiles the PDMP event-loop kernel when Cython is available.

The package is fully functional without the extension (a pure-Python kernel
with the identical algorithm is selected at import time), so a failed or
skipped extension build is not an error.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "pregeneric.pdmp._kernel_cy",
                ["src/pregeneric/pdmp/_kernel_cy.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
        compiler_directives={"boundscheck": False, "wraparound": False},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
