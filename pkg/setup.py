"""Build script for the optional compiled kernel extension.

The package is fully functional without the extension: imaging falls back to
the numpy/scipy backend at import time. Any failure here (no Cython, no C
compiler) downgrades the install to pure Python instead of aborting it.
"""

import logging

from setuptools import setup
from setuptools.command.build_ext import build_ext

log = logging.getLogger("inspecta.setup")


class optional_build_ext(build_ext):
    """Build the extension if possible, warn and continue if not."""

    def run(self):
        try:
            build_ext.run(self)
        except Exception as exc:
            log.warning("compiled kernels skipped: %s", exc)

    def build_extension(self, ext):
        try:
            build_ext.build_extension(self, ext)
        except Exception as exc:
            log.warning("compiled kernels skipped (%s): %s", ext.name, exc)


def extension_modules():
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError as exc:
        log.warning("compiled kernels skipped: %s", exc)
        return []
    exts = [
        Extension(
            "inspecta.imaging._kernels",
            ["src/inspecta/imaging/_kernels.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
    ]
    return cythonize(
        exts,
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )


setup(
    ext_modules=extension_modules(),
    cmdclass={"build_ext": optional_build_ext},
)
