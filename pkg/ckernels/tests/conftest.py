import shutil
import subprocess
from pathlib import Path

import pytest

CKERNELS_DIR = Path(__file__).resolve().parent.parent


@pytest.fixture(scope="session")
def built_modules():
    """Build the native modules once; skip the suite without a toolchain."""
    if shutil.which("cc") is None or shutil.which("make") is None:
        pytest.skip("no C toolchain available")
    proc = subprocess.run(
        ["make", "-C", str(CKERNELS_DIR)], capture_output=True, text=True
    )
    if proc.returncode != 0:
        pytest.fail(f"ckernels build failed:\n{proc.stdout}{proc.stderr}")
    return {
        "gemm": CKERNELS_DIR / "libsfgemm.so",
        "elementwise": CKERNELS_DIR / "libsfelementwise.so",
    }
