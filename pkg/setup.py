from setuptools import Extension, setup

# The compiled kernels are optional: the package falls back to the numpy
# implementations in patchlink.kernels._fallback when the extension is absent.
try:
    import numpy as np
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "patchlink.kernels._native",
                ["src/patchlink/kernels/_native.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
