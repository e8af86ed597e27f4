import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # no Cython: install the pure-Python package only
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("seqcara._kernel", ["src/seqcara/_kernel.pyx"],
                   include_dirs=[np.get_include()], extra_compile_args=["-O2"], optional=True)],
        language_level=3,
    )

setup(ext_modules=ext_modules)
