import os
import subprocess
import sys
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    """Builds the _marsrec extension with the project's CMake configuration."""

    def build_extension(self, ext):
        ext_dir = Path(self.get_ext_fullpath(ext.name)).resolve().parent
        source_dir = Path(__file__).resolve().parent
        build_dir = Path(self.build_temp).resolve()
        build_dir.mkdir(parents=True, exist_ok=True)

        cfg = [
            f"-DCMAKE_BUILD_TYPE={os.environ.get('MARSREC_BUILD_TYPE', 'Release')}",
            f"-DMARSREC_PY_OUTPUT={ext_dir}",
            f"-DPython3_EXECUTABLE={sys.executable}",
        ]
        subprocess.run(["cmake", "-S", str(source_dir), "-B", str(build_dir)] + cfg, check=True)
        subprocess.run(
            ["cmake", "--build", str(build_dir), "--target", "_marsrec", "-j"], check=True
        )


setup(
    packages=["marsrec"],
    package_dir={"marsrec": "python/marsrec"},
    ext_modules=[CMakeExtension("marsrec._marsrec")],
    cmdclass={"build_ext": CMakeBuild},
    zip_safe=False,
)
