"""Builds the posereg_py extension by delegating to cargo.

The sandbox's package mirror has no setuptools-rust/maturin, so this is a
minimal build_ext that compiles the cdylib and copies it into place.
"""

import shutil
import subprocess
from pathlib import Path

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

CRATE_DIR = Path(__file__).parent.resolve()


class CargoBuildExt(build_ext):
    def build_extension(self, ext):
        subprocess.run(
            ["cargo", "build", "--release", "-p", "posereg-py"],
            cwd=CRATE_DIR,
            check=True,
        )
        # workspace-level target directory
        built = CRATE_DIR.parent.parent / "target" / "release" / "libposereg_py.so"
        out = Path(self.get_ext_fullpath(ext.name))
        out.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(built, out)


setup(
    ext_modules=[Extension("posereg_py", sources=[])],
    cmdclass={"build_ext": CargoBuildExt},
)
