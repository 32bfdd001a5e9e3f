"""Power-of-two row/column scaling helpers shared by both schemes."""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation, NonFiniteInput

#: Exponent given to all-zero rows/columns.  Far below any FP64 exponent,
#: so it never wins a comparison, yet small enough to stay an ordinary int.
ZERO_EXPONENT = -4096


def as_real_matrix(m, name: str = "matrix") -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2:
        raise ContractViolation(f"{name} must be 2-D, got shape {m.shape}")
    if np.iscomplexobj(m):
        raise ContractViolation(f"{name} must be real; use complex_gemm")
    return m.astype(np.float64, copy=False)


def check_finite(m: np.ndarray, name: str = "matrix") -> None:
    if not np.isfinite(m).all():
        raise NonFiniteInput(f"{name} contains NaN or Inf")


def axis_for(orientation: str) -> int:
    """Reduction axis for an operand: rows of a left operand, columns of a right one."""
    if orientation == "row":
        return 1
    if orientation == "col":
        return 0
    raise ContractViolation(f"orientation must be 'row' or 'col', got {orientation!r}")


def bounding_exponents(m: np.ndarray, orientation: str) -> np.ndarray:
    """Smallest ``e`` per row (or column) with ``max|entry| < 2**e``.

    All-zero lines get :data:`ZERO_EXPONENT`.
    """
    mags = np.abs(m).max(axis=axis_for(orientation), initial=0.0)
    _, e = np.frexp(mags)
    e = e.astype(np.int64)
    e[mags == 0] = ZERO_EXPONENT
    return e


def broadcast_scale(e: np.ndarray, orientation: str) -> np.ndarray:
    """Shape exponents so they broadcast against the matrix they describe."""
    return e[:, None] if orientation == "row" else e[None, :]


def scale_lines(m: np.ndarray, e: np.ndarray, orientation: str) -> np.ndarray:
    """Multiply each row/column by ``2**e`` exactly (``ldexp``)."""
    return np.ldexp(m, broadcast_scale(e, orientation))
