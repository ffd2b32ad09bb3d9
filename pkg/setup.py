"""Build script for the optional compiled state-space kernel.

The package installs and runs without the extension (a numpy fallback is
selected at import time); building it just makes the counterfactual fits
faster. `pip install -e . --no-build-isolation` with cython + a C compiler
present builds it in place.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "faultline._statespace",
                ["src/faultline/_statespace.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
