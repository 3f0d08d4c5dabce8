"""Build the optional compiled kernel; the package falls back to NumPy without it."""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("CATHROD_NO_EXTENSION"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension("cathrod._ckernels", ["src/cathrod/_ckernels.pyx"],
                       extra_compile_args=["-O3"])],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
