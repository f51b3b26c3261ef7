"""Build script: compiles the optional native scan kernel.

The package works without the extension (a pure-Python kernel is selected
at import time); set RINGIDS_NO_EXT=1 to skip compiling it.
"""

import os

from setuptools import Extension, setup


def _extensions():
    if os.environ.get("RINGIDS_NO_EXT"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    return cythonize(
        [Extension("ringids._acscan", ["src/ringids/_acscan.pyx"])],
        compiler_directives={"language_level": "3"},
    )


setup(ext_modules=_extensions())
