"""Builds the optional compiled kernels; the package falls back to NumPy without them."""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("PGNN_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "pgnn._kernels",
                    ["src/pgnn/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
