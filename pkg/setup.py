"""Build script for the compiled kernel extension.

The package works without the extension (a pure-Python fallback is selected
at import time); building it just makes the inference inner loops fast.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "ctxrescore._kernels._core",
                ["src/ctxrescore/_kernels/_core.pyx"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
