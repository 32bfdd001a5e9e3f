"""Exact signed 8-bit integer matrix multiplication.

Both emulation schemes reduce an FP64 GEMM to a handful of int8 x int8
products whose results must be *exact*.  Everything here is integer-exact
by construction so that all emulation error can be attributed to the
decomposition step, never to the multiplier.

Matrices are plain numpy arrays.  Layout is not part of the contract:
callers may pass C- or Fortran-ordered arrays.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation

#: Largest reduction length one block may use.  The extreme product is
#: (-128)**2 = 2**14, so k * 2**14 < 2**31 requires k < 2**17.
MAX_BLOCK_K = (1 << 17) - 1
#: Default k-blocking, about half the provable bound.
DEFAULT_BLOCK_K = 1 << 16


def as_int8(a, name: str = "a") -> np.ndarray:
    """Validate an int8 matrix operand and return it as a 2-D array."""
    a = np.asarray(a)
    if a.ndim != 2:
        raise ContractViolation(f"{name} must be 2-D, got shape {a.shape}")
    if a.dtype != np.int8:
        if not np.issubdtype(a.dtype, np.integer):
            raise ContractViolation(f"{name} must hold integers, got {a.dtype}")
        if a.size and (a.min() < -128 or a.max() > 127):
            raise ContractViolation(f"{name} has entries outside [-128, 127]")
        a = a.astype(np.int8)
    return a


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(
            f"inner dimensions differ: {a.shape} x {b.shape}")


class IntegerMatmulBackend:
    """Base class for exact int8 GEMM engines.

    Subclasses implement :meth:`int8_gemm_block`; the k-blocked wrapper
    :meth:`int8_gemm` is shared.
    """

    name = "abstract"
    #: Longest reduction a single block call accepts exactly.
    max_reduction = MAX_BLOCK_K

    def int8_gemm_block(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _block_precheck(self, a, b):
        a = as_int8(a, "a")
        b = as_int8(b, "b")
        _check_shapes(a, b)
        if a.shape[1] > self.max_reduction:
            raise ContractViolation(
                f"reduction length {a.shape[1]} exceeds the exact bound "
                f"{self.max_reduction}; block the call")
        return a, b

    def int8_gemm(self, a, b, block: int = DEFAULT_BLOCK_K,
                  modulus: int | None = None) -> np.ndarray:
        """Exact product of arbitrary reduction length, as int64.

        The reduction is cut into ``block``-long pieces, each multiplied by
        :meth:`int8_gemm_block` and summed in 64-bit.  With ``modulus`` the
        running sum is reduced to ``[0, modulus)`` before each further block
        is added, so it stays below ``modulus + block * 2**14`` for any K;
        the result is congruent to the exact product, not fully reduced.
        """
        if not 1 <= block <= self.max_reduction:
            raise ContractViolation(
                f"block must lie in [1, {self.max_reduction}], got {block}")
        a = as_int8(a, "a")
        b = as_int8(b, "b")
        _check_shapes(a, b)
        m, kk = a.shape
        n = b.shape[1]
        acc = np.zeros((m, n), dtype=np.int64)
        for k0 in range(0, kk, block):
            if modulus is not None and k0:
                acc %= modulus
            k1 = min(kk, k0 + block)
            acc += self.int8_gemm_block(a[:, k0:k1], b[k0:k1, :])
        return acc


class FloatCarrierBackend(IntegerMatmulBackend):
    """int8 products computed by FP64 BLAS on int8-valued operands.

    Every product is below 2**14 and every partial sum below 2**31, so all
    intermediate values are integers far inside the 53-bit significand:
    the BLAS result is exact regardless of its summation order or thread
    count.
    """

    name = "float-carrier"

    def int8_gemm_block(self, a, b) -> np.ndarray:
        a, b = self._block_precheck(a, b)
        prod = a.astype(np.float64) @ b.astype(np.float64)
        return prod.astype(np.int32)


class LoopBackend(IntegerMatmulBackend):
    """Integer matmul with a genuine 32-bit accumulator (numpy's integer loop)."""

    name = "int32-loop"

    def int8_gemm_block(self, a, b) -> np.ndarray:
        a, b = self._block_precheck(a, b)
        return np.matmul(a.astype(np.int32), b.astype(np.int32))


class CountingBackend(IntegerMatmulBackend):
    """Wrap a backend and count logical low-precision GEMMs.

    One :meth:`int8_gemm` call is one emulated low-precision GEMM, however
    many k-blocks it is cut into.  Instances are meant to be created per
    dispatched call, so the counter is never shared between threads.
    """

    def __init__(self, inner: IntegerMatmulBackend):
        self.inner = inner
        self.name = f"counting({inner.name})"
        self.max_reduction = inner.max_reduction
        self.calls = 0

    def int8_gemm_block(self, a, b):
        return self.inner.int8_gemm_block(a, b)

    def int8_gemm(self, a, b, block=DEFAULT_BLOCK_K, modulus=None):
        self.calls += 1
        return self.inner.int8_gemm(a, b, block=block, modulus=modulus)


_DEFAULT = FloatCarrierBackend()


def default_backend() -> IntegerMatmulBackend:
    return _DEFAULT


def int8_gemm_block(a, b, backend: IntegerMatmulBackend | None = None) -> np.ndarray:
    """Exact ``a @ b`` for int8 operands with ``k < 2**17``, as int32."""
    return (backend or _DEFAULT).int8_gemm_block(a, b)


def int8_gemm(a, b, block: int = DEFAULT_BLOCK_K,
              backend: IntegerMatmulBackend | None = None) -> np.ndarray:
    """Exact ``a @ b`` for int8 operands of any reduction length, as int64."""
    return (backend or _DEFAULT).int8_gemm(a, b, block=block)
