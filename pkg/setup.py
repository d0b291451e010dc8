"""Build script: compiles the optional GMP-backed arithmetic core.

The package works without the extension (a pure-Python fallback is selected
at import time), so any failure here downgrades to a warning instead of
aborting the install.
"""

import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the extension if possible; warn and continue otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - depends on toolchain
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover - depends on toolchain
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        sys.stderr.write(
            "warning: could not build the GMP arithmetic core (%s); "
            "falling back to the pure-Python backend\n" % (exc,)
        )


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:  # pragma: no cover - Cython missing entirely
        sys.stderr.write(
            "warning: Cython not available; building without the GMP core\n"
        )
        return []
    ext = Extension(
        "pura._mathcore._gmpcore",
        sources=["src/pura/_mathcore/_gmpcore.pyx"],
        libraries=["gmp"],
        extra_compile_args=["-O2"],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
