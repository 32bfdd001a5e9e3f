"""FP64 GEMM emulation on an exact int8 matrix-multiply backend.

Two schemes are provided: mantissa slicing (:mod:`ozemu.ozaki1`) and
modular arithmetic with CRT reconstruction (:mod:`ozemu.ozaki2`).
:mod:`ozemu.dispatch` routes real and complex GEMM calls by mode,
:mod:`ozemu.shim` reroutes BLAS calls of unmodified programs, and
:mod:`ozemu.workload` runs the resolvent contour sweep used for accuracy
studies.
"""

from .dispatch import EmulationMode, gemm_dispatch, zgemm_dispatch
from .ozaki1 import ProductStrategy, ozaki1_gemm
from .ozaki2 import ozaki2_gemm

__all__ = ["EmulationMode", "ProductStrategy", "gemm_dispatch", "ozaki1_gemm", "ozaki2_gemm",
           "zgemm_dispatch"]
__version__ = "0.1.0"
