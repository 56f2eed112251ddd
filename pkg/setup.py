import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # the package falls back to numpy without the extension
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "zygmra._quadcore",
                ["src/zygmra/_quadcore.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
