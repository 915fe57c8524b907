import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("SSB_PURE_PYTHON"):
    try:
        from Cython.Build import cythonize
        import numpy as np
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [Extension("ssbridge._kernels", ["src/ssbridge/_kernels.pyx"],
                       include_dirs=[np.get_include()],
                       extra_compile_args=["-O3", "-ffp-contract=off"])],
            language_level=3,
        )

setup(ext_modules=ext_modules)
