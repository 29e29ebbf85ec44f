"""Build script: compiles the optional ADMM kernel extension.

The package works without the extension (a pure-python engine is selected at
import time), so any compiler failure downgrades to a plain install instead
of aborting.
"""
import os

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Build the extension if possible, otherwise install without it."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler or toolchain missing
            print(f"warning: extension build skipped ({exc}); "
                  "fairmpc will use the pure-python QP engine")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: building {ext.name} failed ({exc}); "
                  "fairmpc will use the pure-python QP engine")


ext_modules = []
if os.environ.get("FAIRMPC_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "fairmpc.qp._kernels",
                    ["src/fairmpc/qp/_kernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules, cmdclass={"build_ext": optional_build_ext})
