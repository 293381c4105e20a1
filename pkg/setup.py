import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# REDOX_SIM_NO_EXT=1 skips the compiled core; the pure-Python engine is used.
if os.environ.get("REDOX_SIM_NO_EXT"):
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "redox_sim._core",
                ["src/redox_sim/_core.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # no -ffast-math: float accumulation must match the Python engine bit for bit
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

setup(ext_modules=ext_modules)
