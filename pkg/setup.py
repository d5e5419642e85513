import os

from setuptools import setup

ext_modules = []
if os.environ.get("CROPHEIGHT_NO_EXT", "") in ("", "0"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "cropheight._kernels",
                    ["src/cropheight/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        # Cython/numpy missing at build time: ship the pure-Python fallback only
        ext_modules = []

setup(ext_modules=ext_modules)
