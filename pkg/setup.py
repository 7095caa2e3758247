"""Build script: compiles the optional sparse-kernel extension.

The package is fully functional without the extension (a NumPy fallback is
selected at import time); building it just makes the CSR kernels fast.
"""

from setuptools import setup

try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    extensions = cythonize(
        [
            Extension(
                "glinkx.kernels._ckern",
                ["src/glinkx/kernels/_ckern.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
