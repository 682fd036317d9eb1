from Cython.Build import cythonize
from setuptools import Extension, setup

# optional: a failed compile falls back to the pure-Python kernels,
# selected at import time by radiant_ens._kernels
extensions = [
    Extension(
        "radiant_ens._kernels._core",
        ["src/radiant_ens/_kernels/_core.pyx"],
        optional=True,
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
