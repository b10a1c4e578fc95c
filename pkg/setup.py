# Builds the optional compiled kernel core. The package works without it
# (numpy fallback is selected at import), so a missing Cython/toolchain only
# costs speed: python setup.py build_ext --inplace, or just pip install -e .
from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "ented._kernels._core_cy",
                ["src/ented/_kernels/_core_cy.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
