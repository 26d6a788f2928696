import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install, fallback kernels are used
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("OEWT_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "oewt._ckernels",
                ["src/oewt/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-fno-math-errno"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
