from setuptools import Extension, setup

# The compiled kernel is optional: gemap falls back to the numpy backend at
# import time when the extension is unavailable.
try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "gemap._kernels",
                ["src/gemap/_kernels.pyx"],
                # -ffp-contract=off: no FMA contraction, so the compiled
                # kernels stay bit-identical to the numpy fallback.
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
