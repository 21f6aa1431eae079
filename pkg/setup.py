"""Build script: compiles the inner-loop kernels when Cython is available.

The package works without the extension (a numpy fallback is selected at
import time), so the extension is marked optional and a failed compile does
not fail the install.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "eh_allocate._kernels",
                ["src/eh_allocate/_kernels.pyx"],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
