"""Build script: compiles the optional kernel extension.

The package works without the extension (a numpy fallback is selected at
import time); set FUSEDET_SKIP_EXT=1 to skip compilation explicitly.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("FUSEDET_SKIP_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "fusedet._kernels",
                    sources=["src/fusedet/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )
    except Exception as exc:  # noqa: BLE001 - any build failure degrades to pure python
        print(f"fusedet: building without compiled kernels ({exc})")

setup(ext_modules=ext_modules)
