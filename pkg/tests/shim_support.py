"""Helpers shared by the shim tests and the acceptance suite."""

import os
import shutil
import subprocess
from pathlib import Path

import numpy as np

DRIVER_SOURCE = Path(__file__).with_name("c") / "gemm_driver.c"
DRIVER_CALLS = {"dgemm": 4, "zgemm": 4}


def have_compiler_and_blas() -> bool:
    return shutil.which("cc") is not None


def build_driver(outdir: Path) -> Path:
    exe = Path(outdir) / "gemm_driver"
    subprocess.run(["cc", "-O2", "-o", str(exe), str(DRIVER_SOURCE), "-lblas"], check=True,
                   capture_output=True, text=True)
    return exe


def clean_env(**extra) -> dict:
    env = {k: v for k, v in os.environ.items()
           if not k.startswith("GEMM_EMU_") and k != "LD_PRELOAD"}
    env.update({k: str(v) for k, v in extra.items()})
    return env


def run_driver(exe, *args, preload=None, **env):
    extra = dict(env)
    if preload is not None:
        extra["LD_PRELOAD"] = str(preload)
    return subprocess.run([str(exe), *args], env=clean_env(**extra), capture_output=True,
                          text=True, check=True, timeout=300)


def parse_driver_output(text: str):
    """List of (header, values) blocks; complex entries become complex numbers."""
    blocks = []
    for line in text.splitlines():
        if line.startswith(("dgemm", "zgemm")):
            blocks.append((line.strip(), []))
        elif line.strip():
            vals = [float.fromhex(x) for x in line.split()]
            blocks[-1][1].append(complex(*vals) if len(vals) == 2 else vals[0])
    return [(h, np.array(v)) for h, v in blocks]


def max_relative_error(x, ref) -> float:
    """Normwise: ``max|x - ref| / max|ref|``."""
    return float(np.abs(np.asarray(x) - ref).max() / np.abs(ref).max())
