"""Build hook: compiles the optional simulation kernel when Cython is present.

The package is fully functional without the extension -- quantaw.kernels
falls back to the pure-numpy implementation at import time.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext = Extension(
        "quantaw._kernels",
        ["src/quantaw/_kernels.pyx"],
        # fused multiply-adds would round differently from the pure-numpy
        # fallback; trajectories must not depend on the backend
        extra_compile_args=["-ffp-contract=off"],
        optional=True,
    )
    ext_modules = cythonize([ext], compiler_directives={"language_level": "3"})

setup(ext_modules=ext_modules)
