"""Build the optional compiled kernels. Metadata lives in pyproject.toml.

If Cython or a C compiler is missing the package still installs; the numpy
fallback in fansrl.kernels is used at import time.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("FANSRL_NO_EXT", "") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "fansrl.kernels._kernels",
                    ["src/fansrl/kernels/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3", "-fno-math-errno", "-fno-trapping-math"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": 3},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
