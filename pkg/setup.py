"""Build script: compiles the optional CRC extension.

The package works without the extension (a pure-Python CRC kernel is
selected at import time); set SLOPEWATCH_PURE=1 to skip compilation.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("SLOPEWATCH_PURE") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "slopewatch.wire._crc_cy",
                    ["src/slopewatch/wire/_crc_cy.pyx"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        pass

setup(ext_modules=ext_modules)
