"""CMake-driven build of the _panelq extension (pybind11 cmake pattern)."""

import glob
import os
import shutil
import subprocess
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class CMakeExtension(Extension):
    def __init__(self, name):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext):
        source_dir = os.path.abspath(os.path.dirname(__file__))
        build_temp = os.path.abspath(self.build_temp)
        os.makedirs(build_temp, exist_ok=True)

        cmake_args = [
            "-DCMAKE_BUILD_TYPE=Release",
            "-DPANELQ_BUILD_TESTS=OFF",
            "-DPANELQ_BUILD_CLI=OFF",
            "-DPANELQ_BUILD_PYTHON=ON",
            f"-DPython3_EXECUTABLE={sys.executable}",
        ]
        subprocess.run(
            ["cmake", "-S", source_dir, "-B", build_temp, *cmake_args], check=True
        )
        subprocess.run(
            ["cmake", "--build", build_temp, "--target", "_panelq", "--parallel"],
            check=True,
        )

        built = glob.glob(os.path.join(build_temp, "python", "panelq", "_panelq*"))
        if not built:
            raise RuntimeError("cmake did not produce the _panelq extension")
        dest = self.get_ext_fullpath(ext.name)
        os.makedirs(os.path.dirname(dest), exist_ok=True)
        shutil.copyfile(built[0], dest)


setup(
    ext_modules=[CMakeExtension("panelq._panelq")],
    cmdclass={"build_ext": CMakeBuild},
)
