import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("BQNES_NO_EXT", "") in ("", "0"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [Extension("bqnes._ckernels", ["src/bqnes/_ckernels.pyx"],
                       include_dirs=[np.get_include()], extra_compile_args=["-O3", "-fno-math-errno"])],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
