"""BLAS GEMM interposition: Fortran-convention entry points and the C shim.

:func:`dgemm_entry` and :func:`zgemm_entry` behave like reference BLAS
``dgemm``/``zgemm`` on column-major buffers, but compute the product through
the dispatcher.  The shared library built by :func:`build_shim` exports the
standard symbols and forwards every call here, so a dynamically linked
program run with ``LD_PRELOAD=<lib>`` is rerouted without recompiling.

Build from the command line with ``python3 -m ozemu.shim build [DIR]``.
"""

from __future__ import annotations

import argparse
import ctypes
import ctypes.util
import os
import shutil
import subprocess
import sys
import sysconfig
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .dispatch import gemm_dispatch, record_blas_call, zgemm_dispatch
from .errors import BlasArgumentError, ContractViolation

LIBRARY_NAME = "libozemu_blas.so"
SOURCE = Path(__file__).with_name("_shim") / "shim.c"


def libpython_path() -> str:
    """Shared libpython of the running interpreter (embedded by the shim)."""
    libdir = sysconfig.get_config_var("LIBDIR") or ""
    soname = sysconfig.get_config_var("INSTSONAME") or sysconfig.get_config_var("LDLIBRARY") or ""
    path = os.path.join(libdir, soname)
    return path if os.path.exists(path) else soname


def default_build_dir() -> Path:
    return Path(os.environ.get("OZEMU_BUILD_DIR") or Path.home() / ".cache" / "ozemu")


def build_shim(outdir: str | os.PathLike | None = None, cc: str | None = None,
               force: bool = False) -> Path:
    """Compile the interposition library; returns its path.

    Rebuilds only when the source is newer than an existing library.
    """
    outdir = Path(outdir) if outdir is not None else default_build_dir()
    outdir.mkdir(parents=True, exist_ok=True)
    target = outdir / LIBRARY_NAME
    if not force and target.exists() and target.stat().st_mtime >= SOURCE.stat().st_mtime:
        return target
    compiler = cc or os.environ.get("CC") or shutil.which("cc") or "gcc"
    cmd = [compiler, "-O2", "-shared", "-fPIC", "-Wall", "-o", str(target), str(SOURCE),
           f'-DOZEMU_LIBPYTHON="{libpython_path()}"', "-ldl", "-lpthread"]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"shim build failed:\n{' '.join(cmd)}\n{proc.stderr}")
    return target


def _trans_flag(flag) -> str:
    if isinstance(flag, bytes):
        flag = flag.decode(errors="replace")
    return str(flag)[:1].upper()


def check_gemm_args(ta: str, tb: str, m, n, k, lda, ldb, ldc) -> int:
    """Reference-BLAS argument check: 0, or the index of the first bad parameter."""
    nrowa = m if ta == "N" else k
    nrowb = k if tb == "N" else n
    checks = [(ta not in ("N", "T", "C"), 1), (tb not in ("N", "T", "C"), 2),
              (m < 0, 3), (n < 0, 4), (k < 0, 5), (lda < max(1, nrowa), 8),
              (ldb < max(1, nrowb), 10), (ldc < max(1, m), 13)]
    return next((info for bad, info in checks if bad), 0)


def _matrix(buf: np.ndarray, rows: int, cols: int, ld: int, name: str) -> np.ndarray:
    """Column-major ``rows x cols`` view of a flat buffer with leading dimension ``ld``."""
    if rows == 0 or cols == 0:
        return np.zeros((rows, cols), dtype=buf.dtype)
    need = ld * (cols - 1) + rows
    if buf.ndim != 1 or buf.size < need:
        raise ContractViolation(f"{name} buffer holds {buf.size} elements, needs {need}")
    step = buf.strides[0]
    return as_strided(buf, shape=(rows, cols), strides=(step, step * ld))


def _op(x: np.ndarray, trans: str) -> np.ndarray:
    if trans == "N":
        return x
    if trans == "C" and np.iscomplexobj(x):
        return x.conj().T
    return x.T


def _gemm_entry(routine, dtype, dispatcher, transa, transb, m, n, k, alpha, a, lda,
                b, ldb, beta, c, ldc):
    m, n, k, lda, ldb, ldc = (int(v) for v in (m, n, k, lda, ldb, ldc))
    ta, tb = _trans_flag(transa), _trans_flag(transb)
    info = check_gemm_args(ta, tb, m, n, k, lda, ldb, ldc)
    if info:
        raise BlasArgumentError(routine.upper(), info)
    record_blas_call(routine)
    a, b, c = (np.asarray(x) for x in (a, b, c))
    for name, x in (("a", a), ("b", b), ("c", c)):
        if x.dtype != dtype:
            raise ContractViolation(f"{name} must have dtype {np.dtype(dtype).name}")
    alpha, beta = dtype(alpha), dtype(beta)
    cv = _matrix(c, m, n, ldc, "c")
    if m == 0 or n == 0 or ((alpha == 0 or k == 0) and beta == 1):
        return c
    if alpha == 0:
        cv[...] = 0 if beta == 0 else beta * cv
        return c
    av = _op(_matrix(a, *((m, k) if ta == "N" else (k, m)), lda, "a"), ta)
    bv = _op(_matrix(b, *((k, n) if tb == "N" else (n, k)), ldb, "b"), tb)
    out = np.array(cv, dtype=dtype, order="C")
    cv[...] = dispatcher(None, av, bv, alpha, beta, out)
    return c


def dgemm_entry(transa, transb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc):
    """``C <- alpha op(A) op(B) + beta C`` on flat column-major float64 buffers.

    Arguments follow the Fortran ``dgemm`` order.  ``c`` is written in place
    and returned.  Invalid arguments raise :class:`BlasArgumentError` with
    the reference parameter index before anything is written.
    """
    return _gemm_entry("dgemm", np.float64, gemm_dispatch, transa, transb, m, n, k,
                       alpha, a, lda, b, ldb, beta, c, ldc)


def zgemm_entry(transa, transb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc):
    """Complex counterpart of :func:`dgemm_entry`; ``'C'`` conjugate-transposes."""
    return _gemm_entry("zgemm", np.complex128, zgemm_dispatch, transa, transb, m, n, k,
                       alpha, a, lda, b, ldb, beta, c, ldc)


def _raw_buffer(addr: int, dtype, rows: int, cols: int, ld: int) -> np.ndarray:
    dtype = np.dtype(dtype)
    if rows == 0 or cols == 0 or not addr:
        return np.zeros(0, dtype=dtype)
    size = ld * (cols - 1) + rows
    raw = (ctypes.c_char * (size * dtype.itemsize)).from_address(addr)
    return np.frombuffer(raw, dtype=dtype, count=size)


def _c_entry(entry, dtype, ta, tb, m, n, k, alpha, a_addr, lda, b_addr, ldb, beta,
             c_addr, ldc) -> int:
    t_a, t_b = _trans_flag(ta), _trans_flag(tb)
    ra, ca = (m, k) if t_a == "N" else (k, m)
    rb, cb = (k, n) if t_b == "N" else (n, k)
    try:
        entry(ta, tb, m, n, k, alpha,
              _raw_buffer(a_addr, dtype, ra, ca, lda), lda,
              _raw_buffer(b_addr, dtype, rb, cb, ldb), ldb, beta,
              _raw_buffer(c_addr, dtype, m, n, ldc), ldc)
    except BlasArgumentError as exc:
        print(f" ** {exc}", file=sys.stderr)
        return exc.info
    return 0


def _c_dgemm(ta, tb, m, n, k, alpha, a_addr, lda, b_addr, ldb, beta, c_addr, ldc) -> int:
    """Callback used by the C shim; pointers arrive as integers."""
    return _c_entry(dgemm_entry, np.float64, ta, tb, m, n, k, alpha, a_addr, lda,
                    b_addr, ldb, beta, c_addr, ldc)


def _c_zgemm(ta, tb, m, n, k, alpha_re, alpha_im, a_addr, lda, b_addr, ldb,
             beta_re, beta_im, c_addr, ldc) -> int:
    return _c_entry(zgemm_entry, np.complex128, ta, tb, m, n, k, complex(alpha_re, alpha_im),
                    a_addr, lda, b_addr, ldb, complex(beta_re, beta_im), c_addr, ldc)


# ctypes access to whatever provides the standard symbols in this process


def global_blas_symbol(name: str):
    """Resolve a BLAS symbol through the process-wide namespace.

    A preloaded shim therefore wins over the system BLAS.  If no loaded
    object exports the symbol yet, the system ``libblas`` is loaded with
    ``RTLD_GLOBAL`` first.
    """
    process = ctypes.CDLL(None)
    try:
        return getattr(process, name)
    except AttributeError:
        pass
    libname = ctypes.util.find_library("blas") or "libblas.so.3"
    ctypes.CDLL(libname, mode=ctypes.RTLD_GLOBAL)
    return getattr(ctypes.CDLL(None), name)


def _call_fortran_gemm(fn, dtype, a, b, alpha, beta, c, transa="N", transb="N"):
    a = np.asfortranarray(a, dtype=dtype)
    b = np.asfortranarray(b, dtype=dtype)
    cf = np.asfortranarray(c, dtype=dtype)
    m, n = cf.shape
    k = a.shape[1] if transa == "N" else a.shape[0]
    scalars = [np.array([v], dtype=dtype) for v in (alpha, beta)]
    ints = [ctypes.c_int(v) for v in (m, n, k, max(1, a.shape[0]), max(1, b.shape[0]), max(1, m))]
    ptr = lambda x: x.ctypes.data_as(ctypes.c_void_p)  # noqa: E731
    fn(ctypes.c_char_p(transa.encode()), ctypes.c_char_p(transb.encode()),
       ctypes.byref(ints[0]), ctypes.byref(ints[1]), ctypes.byref(ints[2]),
       ptr(scalars[0]), ptr(a), ctypes.byref(ints[3]), ptr(b), ctypes.byref(ints[4]),
       ptr(scalars[1]), ptr(cf), ctypes.byref(ints[5]))
    c[...] = cf
    return c


def blas_zgemm():
    """``ComplexGemm`` (see the workload module) calling the process ``zgemm_``."""
    fn = global_blas_symbol("zgemm_")

    def gemm(a, b, alpha, beta, c):
        return _call_fortran_gemm(fn, np.complex128, a, b, alpha, beta, c)
    return gemm


def blas_dgemm():
    """Real counterpart of :func:`blas_zgemm`."""
    fn = global_blas_symbol("dgemm_")

    def gemm(a, b, alpha, beta, c):
        return _call_fortran_gemm(fn, np.float64, a, b, alpha, beta, c)
    return gemm


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="python3 -m ozemu.shim",
                                     description="Build the BLAS GEMM interposition library.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_build = sub.add_parser("build", help="compile the shim and print its path")
    p_build.add_argument("outdir", nargs="?", default=None)
    p_build.add_argument("--force", action="store_true", help="rebuild even if up to date")
    args = parser.parse_args(argv)
    try:
        print(build_shim(args.outdir, force=args.force))
    except RuntimeError as exc:
        print(exc, file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
