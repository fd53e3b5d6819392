"""Build script: compiles the optional engine kernel when Cython is available.

The package is fully functional without the extension (a pure-Python engine
backend is selected at import time), so any build failure here downgrades to
a warning instead of aborting the install.  Set SERVESIM_NO_EXT=1 to skip the
extension build entirely.
"""

import os
import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


def _extensions():
    if os.environ.get("SERVESIM_NO_EXT"):
        return []
    try:
        from Cython.Build import cythonize
    except ImportError:
        print("servesim: Cython not available, building without the engine kernel",
              file=sys.stderr)
        return []
    return cythonize(
        ["src/servesim/engine/_kernel.pyx"],
        compiler_directives={"language_level": "3"},
    )


class OptionalBuildExt(build_ext):
    """Treat extension build failures as a soft downgrade to pure Python."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - toolchain dependent
            print(f"servesim: engine kernel build skipped ({exc}); "
                  "the pure-Python backend will be used", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover - toolchain dependent
            print(f"servesim: failed to compile {ext.name} ({exc}); "
                  "the pure-Python backend will be used", file=sys.stderr)


setup(
    ext_modules=_extensions(),
    cmdclass={"build_ext": OptionalBuildExt},
)
