"""Independent high-precision references for testing the emulators.

* :func:`exact_int_gemm` multiplies arbitrary-precision integers (Python
  ``int`` in object arrays), no rounding anywhere.
* :func:`extended_gemm` accumulates each dot product in double-word
  arithmetic built from error-free transformations, giving roughly twice
  the FP64 precision.

Both favour clarity over speed.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from .errors import ContractViolation

_SPLITTER = 134217729.0  # 2**27 + 1


def as_wide_int(a) -> np.ndarray:
    """Object array of Python ints (exact) from any integer-valued input."""
    a = np.asarray(a)
    if a.dtype == object:
        return a
    if np.issubdtype(a.dtype, np.floating):
        if not np.all(a == np.round(a)):
            raise ContractViolation("float input is not integer-valued")
        return np.vectorize(lambda v: int(v), otypes=[object])(a)
    return a.astype(object)


def exact_int_gemm(a, b) -> np.ndarray:
    """Exact integer product of two wide-integer matrices."""
    a = as_wide_int(a)
    b = as_wide_int(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractViolation(f"cannot multiply {a.shape} by {b.shape}")
    return _object_gemm(a, b, 0)


def two_sum(a, b):
    """``s + e == a + b`` exactly (Knuth)."""
    s = a + b
    bb = s - a
    e = (a - (s - bb)) + (b - bb)
    return s, e


def fast_two_sum(a, b):
    """``s + e == a + b`` exactly, provided ``|a| >= |b|``."""
    s = a + b
    e = b - (s - a)
    return s, e


def _split(a):
    c = _SPLITTER * a
    hi = c - (c - a)
    return hi, a - hi


def two_prod(a, b):
    """``p + e == a * b`` exactly (Dekker/Veltkamp, no FMA needed)."""
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


def dw_add(xh, xl, yh, yl):
    """Accurate double-word addition (relative error about 3 u**2)."""
    sh, sl = two_sum(xh, yh)
    th, tl = two_sum(xl, yl)
    sl = sl + th
    sh, sl = fast_two_sum(sh, sl)
    sl = sl + tl
    return fast_two_sum(sh, sl)


def extended_gemm(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Double-word ``a @ b``: returns ``(hi, lo)`` with ``hi = fl(hi + lo)``.

    Every product is split exactly with :func:`two_prod` and added to a
    double-word accumulator.  Inputs are assumed far from overflow.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractViolation(f"cannot multiply {a.shape} by {b.shape}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ContractViolation("extended_gemm needs finite inputs")
    m, n = a.shape[0], b.shape[1]
    hi = np.zeros((m, n))
    lo = np.zeros((m, n))
    for p in range(a.shape[1]):
        ph, pl = two_prod(a[:, p:p + 1], b[p:p + 1, :])
        hi, lo = dw_add(hi, lo, ph, pl)
    return hi, lo


def extended_complex_gemm(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Double-word complex product, as ``(hi, lo)`` complex arrays.

    Real and imaginary parts are single real dot products of doubled
    length: ``Re = [Ar Ai] @ [Br; -Bi]``, ``Im = [Ar Ai] @ [Bi; Br]``.
    """
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    left = np.hstack([a.real, a.imag])
    re_h, re_l = extended_gemm(left, np.vstack([b.real, -b.imag]))
    im_h, im_l = extended_gemm(left, np.vstack([b.imag, b.real]))
    return re_h + 1j * im_h, re_l + 1j * im_l


def rational_gemm(a, b) -> np.ndarray:
    """Exact product over the rationals (object array of ``Fraction``)."""
    fa = np.vectorize(Fraction, otypes=[object])(np.asarray(a, dtype=np.float64))
    fb = np.vectorize(Fraction, otypes=[object])(np.asarray(b, dtype=np.float64))
    return _object_gemm(fa, fb, Fraction(0))


def _object_gemm(a, b, zero):
    # object-dtype dot runs Python int/Fraction arithmetic: exact, no rounding
    m, n = a.shape[0], b.shape[1]
    if a.shape[1] == 0:
        out = np.empty((m, n), dtype=object)
        out.fill(zero)
        return out
    return a.dot(b)
