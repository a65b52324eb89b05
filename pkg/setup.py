import os

import numpy as np
from setuptools import Extension, setup

# The compiled kernel is optional: without Cython the package falls back to
# the pure-numpy implementation in kktembed._kernels_py.
ext_modules = []
if os.environ.get("KKTEMBED_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "kktembed._kernels",
                    ["src/kktembed/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )

setup(ext_modules=ext_modules)
