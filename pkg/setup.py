"""Build script: compiles the optional search kernel extension.

The package works without the extension; ``wcpref.learner`` falls back to
the pure-Python kernel when the compiled module is missing.
"""

import os

from setuptools import Extension, setup

PYX = os.path.join("src", "wcpref", "_search.pyx")

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

if cythonize is not None and os.path.exists(PYX):
    extensions = cythonize(
        [Extension("wcpref._search", [PYX], extra_compile_args=["-O3"])],
        language_level="3",
    )
else:
    extensions = []

setup(ext_modules=extensions)
