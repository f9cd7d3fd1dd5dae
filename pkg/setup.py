"""Build script: compiles the optional accelerator extension.

The package works without the extension (a pure-Python fallback is
selected at import time), so a failed Cython build only costs speed.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "slotstream._accel",
                ["src/slotstream/_accel.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
