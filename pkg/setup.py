"""Build script for the optional compiled solver kernel.

The extension is a pure speedup; when Cython or a C compiler is missing
the package installs anyway and falls back to the pure-Python kernel.
``-ffp-contract=off`` keeps C arithmetic bit-compatible with the Python
reference (no fused multiply-adds).
"""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "setmetric._kernel",
                ["src/setmetric/_kernel.pyx"],
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        language_level="3",
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
