import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extra = [] if os.name == "nt" else ["-O3"]

extensions = [
    Extension(
        "meanbias._kernels",
        ["src/meanbias/_kernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=extra,
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )
)
