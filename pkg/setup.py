import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = []
if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "scns._coverage_cy",
                ["src/scns/_coverage_cy.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

# Without Cython the package installs pure-Python; scns.coverage falls back
# to the numpy backend at import time.
setup(ext_modules=extensions)
