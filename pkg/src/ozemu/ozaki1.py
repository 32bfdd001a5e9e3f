"""Slice-based GEMM emulation (Ozaki scheme I).

Each row of the left operand (column of the right operand) is aligned to a
shared power-of-two exponent ``e`` and written as ``s`` signed base-256
digits::

    a[i, j] ~= sum_{t=1..s} slice_t[i, j] * 2**(e_i - 8 t)

Slice products are exact int8 GEMMs; they are combined in FP64 from the
least significant pair group upwards.  ``s`` slices emulate ``8 s - 1``
mantissa bits, so ``s = 4..8`` gives the 31/39/47/55/63-bit modes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from ._scaling import (ZERO_EXPONENT, as_real_matrix, axis_for,
                       bounding_exponents, broadcast_scale, check_finite,
                       scale_lines)
from .backend import DEFAULT_BLOCK_K, IntegerMatmulBackend, default_backend
from .errors import ContractViolation

SLICE_BITS = 8
MAX_SLICES = 8


class ProductStrategy(enum.Enum):
    """Which slice pairs ``(t, u)`` enter the product (1-based indices)."""

    EAGER = "eager"  # t + u <= s + 1
    FULL = "full"    # all s**2 pairs

    def pairs(self, s: int) -> list[tuple[int, int]]:
        everything = [(t, u) for t in range(1, s + 1) for u in range(1, s + 1)]
        if self is ProductStrategy.FULL:
            return everything
        return [(t, u) for t, u in everything if t + u <= s + 1]

    def pair_count(self, s: int) -> int:
        return s * s if self is ProductStrategy.FULL else s * (s + 1) // 2


@dataclass(frozen=True)
class SliceSet:
    orientation: str
    scales: np.ndarray
    slices: list[np.ndarray] = field(repr=False)
    slice_width_bits: int = SLICE_BITS

    @property
    def count(self) -> int:
        return len(self.slices)

    @property
    def mantissa_bits(self) -> int:
        return SLICE_BITS * self.count - 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.slices[0].shape

    def reconstruct(self) -> np.ndarray:
        """Sum the slices back to FP64 (least significant first)."""
        acc = np.zeros(self.shape)
        for t in range(self.count, 0, -1):
            acc += np.ldexp(self.slices[t - 1].astype(np.float64), -SLICE_BITS * t)
        return scale_lines(acc, self.scales, self.orientation)


def _extract_digits(scaled: np.ndarray, s: int) -> np.ndarray:
    """Balanced base-256 digits of values in ``(-1/2, 1/2)``.

    Round-to-nearest residual recursion; every step is exact in FP64.  A
    digit of +128 is folded into ``-128`` plus a carry into the previous
    digit.  Returns an ``(s, ...)`` float array; only the leading digit may
    still equal 128 afterwards.
    """
    digits = np.empty((s,) + scaled.shape)
    r = scaled
    for t in range(s):
        y = r * 256.0
        d = np.rint(y)
        digits[t] = d
        r = y - d
    for t in range(s - 1, 0, -1):
        over = digits[t] == 128.0
        if over.any():
            digits[t][over] = -128.0
            digits[t - 1][over] += 1.0
    return digits


def slice_decompose(m, s: int, orientation: str = "row") -> SliceSet:
    """Split an FP64 matrix into ``s`` int8 slices with per-line exponents.

    ``orientation='row'`` shares one exponent per row (left operand);
    ``'col'`` one per column (right operand).  The reconstruction error of
    every entry is at most ``2**(e - 8 s - 1)``.
    """
    m = as_real_matrix(m)
    if not 1 <= s <= MAX_SLICES:
        raise ContractViolation(f"slice count must lie in [1, {MAX_SLICES}], got {s}")
    axis = axis_for(orientation)
    check_finite(m)

    e = bounding_exponents(m, orientation)
    nonzero = e != ZERO_EXPONENT
    e[nonzero] += 1  # |m| < 2**(e-1): the leading digit stays within +-128
    while True:
        digits = _extract_digits(scale_lines(m, -e, orientation), s)
        # a leading digit of 128 needs one more bit of headroom
        bump = (digits[0] == 128.0).any(axis=axis)
        if not bump.any():
            break
        e[bump] += 1
    slices = [np.asarray(d, dtype=np.int8) for d in digits]
    return SliceSet(orientation, e, slices)


def ozaki1_gemm(a, b, s: int, strategy: ProductStrategy = ProductStrategy.EAGER,
                backend: IntegerMatmulBackend | None = None,
                block: int = DEFAULT_BLOCK_K) -> np.ndarray:
    """Emulated FP64 ``a @ b`` from ``s`` int8 slices per operand.

    One backend GEMM is issued per retained slice pair: ``s(s+1)/2`` for
    EAGER, ``s**2`` for FULL.
    """
    a = as_real_matrix(a, "a")
    b = as_real_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(f"inner dimensions differ: {a.shape} x {b.shape}")
    strategy = ProductStrategy(strategy)
    backend = backend or default_backend()
    sa = slice_decompose(a, s, "row")
    sb = slice_decompose(b, s, "col")

    # Pairs of equal significance t+u are summed exactly in int64 first.
    groups: dict[int, np.ndarray] = {}
    for t, u in strategy.pairs(s):
        prod = backend.int8_gemm(sa.slices[t - 1], sb.slices[u - 1], block=block)
        g = t + u
        if g in groups:
            groups[g] += prod
        else:
            groups[g] = prod

    # Compensated sum, least significant group first: the result is within
    # about one rounding of the exact retained sum.  Each group is below
    # 8 k 2**14 in magnitude, so its conversion to float64 is exact.
    c = np.zeros((a.shape[0], b.shape[1]))
    err = np.zeros_like(c)
    for g in sorted(groups, reverse=True):
        term = np.ldexp(groups[g].astype(np.float64), -SLICE_BITS * g)
        total = c + term
        back = total - c
        err += (c - (total - back)) + (term - back)
        c = total
    c += err
    return np.ldexp(c, broadcast_scale(sa.scales, "row") + broadcast_scale(sb.scales, "col"))
