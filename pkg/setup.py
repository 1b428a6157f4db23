from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python fallback is selected at import time
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("tidalstream._kernels", ["src/tidalstream/_kernels.pyx"])],
        language_level=3,
    )

setup(ext_modules=ext_modules)
