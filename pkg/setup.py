import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    # Pure-Python install: the numpy kernel backend is used instead.
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "cmvae.kernels._ckern",
                ["src/cmvae/kernels/_ckern.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
