"""CRT-based GEMM emulation (Ozaki scheme II).

The operands are quantized to integers with per-row (left) or per-column
(right) power-of-two scales.  Their product is computed exactly modulo a
set of pairwise-coprime moduli no larger than 256, one int8 GEMM per
modulus, and recovered with the Chinese Remainder Theorem.  The bit budget
``nu`` of the quantization is chosen so that the exact integer product lies
strictly inside ``(-M/2, M/2)``, ``M`` being the product of the moduli;
the modular product is therefore exact and the only error left is input
quantization plus one final rounding to FP64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._scaling import (ZERO_EXPONENT, as_real_matrix, axis_for,
                       bounding_exponents, broadcast_scale, check_finite,
                       scale_lines)
from .backend import DEFAULT_BLOCK_K, IntegerMatmulBackend, default_backend
from .errors import ContractViolation, ModuliBudgetTooSmall

MAX_MODULUS = 256
MAX_MODULI = 24

_LIMB_BITS = 32
_LIMB_MASK = (1 << _LIMB_BITS) - 1


@dataclass(frozen=True)
class ModuliSet:
    moduli: tuple[int, ...]

    def __post_init__(self):
        mods = tuple(int(m) for m in self.moduli)
        object.__setattr__(self, "moduli", mods)
        if not mods:
            raise ContractViolation("a moduli set needs at least one modulus")
        for m in mods:
            if not 1 < m <= MAX_MODULUS:
                raise ContractViolation(f"modulus {m} outside (1, {MAX_MODULUS}]")
        for i, mi in enumerate(mods):
            for mj in mods[i + 1:]:
                if math.gcd(mi, mj) != 1:
                    raise ContractViolation(f"moduli {mi} and {mj} are not coprime")

    def __len__(self):
        return len(self.moduli)

    @cached_property
    def product(self) -> int:
        return math.prod(self.moduli)

    @property
    def product_bits(self) -> float:
        return math.log2(self.product)

    def nu(self, k: int) -> int:
        """Quantization bits for reduction length ``k``.

        Largest ``nu`` with ``2**(2 nu + ceil(log2 k) + 1) <= M``, so that
        ``|sum of k products| <= k (2**nu - 1)**2 < M/2``.
        """
        c = max(int(k) - 1, 0).bit_length()
        return (self.product.bit_length() - c - 2) // 2

    @cached_property
    def _garner_order(self) -> tuple[int, ...]:
        # The even modulus (at most one) goes first: with digit ranges
        # (-m/2, m/2] the mixed-radix value then spans exactly (-M/2, M/2].
        return tuple(sorted(range(len(self.moduli)), key=lambda i: self.moduli[i] % 2))



def choose_moduli(count: int) -> ModuliSet:
    """Greedy maximal moduli: 256, then the largest integers coprime to all chosen."""
    if not 1 <= count <= MAX_MODULI:
        raise ContractViolation(f"moduli count must lie in [1, {MAX_MODULI}], got {count}")
    chosen = [MAX_MODULUS]
    candidate = MAX_MODULUS - 1
    while len(chosen) < count:
        if all(math.gcd(candidate, c) == 1 for c in chosen):
            chosen.append(candidate)
        candidate -= 1
    return ModuliSet(tuple(chosen))


def _center(r: np.ndarray, m: int, half: int) -> np.ndarray:
    """Representative of ``r mod m`` in ``[-half, m - 1 - half]``."""
    return (r + half) % m - half


def center_residue(r, m: int) -> np.ndarray:
    """Residue in ``[-(m//2), (m-1)//2]``; for ``m = 256`` that is exactly int8."""
    return _center(np.asarray(r, dtype=np.int64), m, m // 2)


def _centered_mod(x: np.ndarray, m: int, tie_up: bool) -> np.ndarray:
    """Centered ``x mod m`` for integer-valued float ``x`` with ``|x| < 2**40``.

    ``x - m * rint(x / m)`` is exact there: the quotient estimate is off by
    less than 2**-13, while for odd ``m`` no true quotient lies closer than
    ``1/(2m)`` to a rounding boundary.  For even ``m`` the tie ``+-m/2`` is
    resolved upwards (``tie_up``) or downwards.
    """
    r = x - m * np.rint(x * (1.0 / m))
    if m % 2 == 0:
        half = m // 2
        if tie_up:
            r = np.where(r == -half, half, r)
        else:
            r = np.where(r == half, -half, r)
    return r


@dataclass(frozen=True)
class QuantizedMatrix:
    """Integers ``q`` with ``|q| < 2**nu`` and ``source ~= q * 2**(scale - nu)``.

    ``integers`` holds the exact integer values in float64 (they may exceed
    2**53, but every stored value is an integer).
    """

    integers: np.ndarray = field(repr=False)
    scales: np.ndarray
    nu: int
    orientation: str
    inexact: int = 0

    def dequantize(self) -> np.ndarray:
        return scale_lines(self.integers, self.scales - self.nu, self.orientation)


@dataclass(frozen=True)
class ResidueSet:
    moduli: ModuliSet
    residues: list[np.ndarray] = field(repr=False)


def quantize(m, moduli: ModuliSet, k: int, orientation: str = "row") -> QuantizedMatrix:
    """Round an FP64 matrix to ``nu``-bit integers per row (or column)."""
    m = as_real_matrix(m)
    check_finite(m)
    axis = axis_for(orientation)
    nu = moduli.nu(k)
    if nu <= 0:
        raise ModuliBudgetTooSmall(
            f"moduli product of {moduli.product_bits:.1f} bits leaves no room "
            f"for reduction length {k}")
    e = bounding_exponents(m, orientation)
    limit = 2.0 ** nu
    while True:
        q = np.rint(scale_lines(m, nu - e, orientation))
        # rounding can reach 2**nu exactly; give those lines one more bit
        bump = (np.abs(q) >= limit).any(axis=axis) & (e != ZERO_EXPONENT)
        if not bump.any():
            break
        e[bump] += 1
    inexact = int(np.count_nonzero(scale_lines(q, e - nu, orientation) != m))
    return QuantizedMatrix(q, e, nu, orientation, inexact)


_CHUNK_BITS = 24
_CHUNKS = 4  # 4 x 24 bits cover |q| < 2**96


def _integer_chunks(q: np.ndarray) -> np.ndarray:
    """Exact ``q = sum_j c_j 2**(24 j)``, ``c_j`` integers below 2**24 in magnitude."""
    chunks = np.empty((_CHUNKS,) + q.shape)
    rest = q
    for j in range(_CHUNKS - 1, 0, -1):
        c = np.trunc(np.ldexp(rest, -_CHUNK_BITS * j))
        chunks[j] = c
        rest = rest - np.ldexp(c, _CHUNK_BITS * j)
    chunks[0] = rest
    return chunks


def to_residues(qm: QuantizedMatrix, moduli: ModuliSet) -> ResidueSet:
    """Centered int8 residues of the quantized integers for every modulus."""
    if qm.nu > _CHUNK_BITS * _CHUNKS - 2:
        raise ContractViolation(f"nu = {qm.nu} exceeds the residue path")
    chunks = _integer_chunks(qm.integers)
    weights = np.array([[pow(2, _CHUNK_BITS * j, mod) for j in range(_CHUNKS)]
                        for mod in moduli.moduli], dtype=np.float64)
    # weighted chunk sums stay below 4 * 2**24 * 256 = 2**34: exact
    pre = np.tensordot(weights, chunks, axes=1)
    out = [_centered_mod(pre[i], mod, tie_up=False).astype(np.int8)
           for i, mod in enumerate(moduli.moduli)]
    return ResidueSet(moduli, out)


def residue_gemm(a_res: ResidueSet, b_res: ResidueSet,
                 backend: IntegerMatmulBackend | None = None,
                 block: int = DEFAULT_BLOCK_K) -> list[np.ndarray]:
    """Per-modulus product residues, centered, as int8 arrays.

    Each modulus costs one backend GEMM; the running sum is reduced modulo
    that modulus between k-blocks.
    """
    if a_res.moduli != b_res.moduli:
        raise ContractViolation("operands were reduced with different moduli sets")
    backend = backend or default_backend()
    out = []
    for mod, ra, rb in zip(a_res.moduli.moduli, a_res.residues, b_res.residues):
        if ra.shape[1] != rb.shape[0]:
            raise ContractViolation(f"inner dimensions differ: {ra.shape} x {rb.shape}")
        acc = backend.int8_gemm(ra, rb, block=block, modulus=mod)
        out.append(_centered_mod(acc.astype(np.float64), mod, tie_up=False).astype(np.int8))
    return out


def _check_residues(residues, moduli: ModuliSet) -> list[np.ndarray]:
    if len(residues) != len(moduli):
        raise ContractViolation(
            f"{len(residues)} residue arrays for {len(moduli)} moduli")
    res = [np.asarray(r, dtype=np.int64) for r in residues]
    shape = res[0].shape
    if any(r.shape != shape for r in res):
        raise ContractViolation("residue arrays differ in shape")
    return res


def garner_digits(residues, moduli: ModuliSet) -> list[np.ndarray]:
    """Signed mixed-radix digits of the centered CRT solution.

    Digits follow ``moduli._garner_order``; digit ``i`` lies in
    ``(-m_i/2, m_i/2]`` and the value is ``sum_i d_i * P_i`` with
    ``P_i = prod_{j<i} m_j``.  Digit ``i`` is
    ``(r_i - sum_{j<i} d_j (P_j mod m_i)) * P_i**-1 mod m_i``; the inner sum
    stays below 2**20 in magnitude and the scaled value below 2**29, so
    FP64 carries both exactly.
    """
    res = _check_residues(residues, moduli)
    order = moduli._garner_order
    ordered = [moduli.moduli[i] for i in order]
    stacked = np.empty((len(ordered),) + res[0].shape)
    for i, mi in enumerate(ordered):
        coeffs, p_mod = [], 1
        for mj in ordered[:i]:
            coeffs.append(p_mod)
            p_mod = p_mod * mj % mi
        t = (res[order[i]] % mi).astype(np.float64)
        if i:
            t = t - np.tensordot(np.array(coeffs, dtype=np.float64), stacked[:i], axes=1)
        stacked[i] = _centered_mod(t * pow(p_mod, -1, mi), mi, tie_up=True)
    return list(stacked.astype(np.int64))


def crt_reconstruct(residues, moduli: ModuliSet):
    """Unique integer in ``(-M/2, M/2]`` congruent to every residue.

    Returns Python ints (an object array for array input).
    """
    digits = garner_digits(residues, moduli)
    ordered = [moduli.moduli[i] for i in moduli._garner_order]
    x = np.zeros(digits[0].shape, dtype=object)
    for d, mi in zip(reversed(digits), reversed(ordered)):
        x = x * mi + d.astype(object)
    return x[()] if isinstance(x, np.ndarray) and x.ndim == 0 else x


def _mixed_radix_to_limbs(digits, ordered_moduli, n_limbs):
    """Exact base-2**32 limbs (nonnegative) of ``sum d_i P_i``, assumed >= 0."""
    limbs = np.zeros((n_limbs,) + digits[0].shape, dtype=np.int64)
    for d, mi in zip(reversed(digits), reversed(ordered_moduli)):
        limbs *= mi
        limbs[0] += d
        for j in range(n_limbs - 1):
            carry = limbs[j] >> _LIMB_BITS
            limbs[j] &= _LIMB_MASK
            limbs[j + 1] += carry
    return limbs


def _limbs_to_float(limbs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Correctly rounded ``(mantissa, exponent)`` of nonnegative limb integers.

    Takes the top 62 bits, folds everything below into a sticky bit
    (round-to-odd), and lets the int -> float conversion round once more;
    with 62 >= 53 + 2 bits the two-step rounding equals a single rounding.
    """
    zeros = np.zeros((2,) + limbs.shape[1:], dtype=np.int64)
    lp = np.concatenate([zeros, limbs]).astype(np.uint64)
    nz = lp != 0
    any_nz = nz.any(axis=0)
    top = lp.shape[0] - 1 - np.argmax(nz[::-1], axis=0)
    top = np.where(any_nz, top, 2)
    # count of nonzero limbs strictly below each index
    below = np.concatenate([np.zeros((1,) + nz.shape[1:], dtype=np.int64),
                            np.cumsum(nz, axis=0)])

    def at(idx):
        return np.take_along_axis(lp, idx[None], axis=0)[0]

    lt, l1, l2 = at(top), at(top - 1), at(top - 2)
    low_sticky = np.take_along_axis(below, (top - 2)[None], axis=0)[0] > 0
    bl = np.frexp(lt.astype(np.float64))[1].astype(np.int64)  # bit length of lt
    w = (lt << np.uint64(32)) | l1

    wide = bl >= 30
    drop = np.where(wide, bl - 30, 0).astype(np.uint64)
    fill = np.where(wide, 0, 30 - bl).astype(np.uint64)
    # wide: top 62 bits come from w alone
    win_a = w >> drop
    sticky_a = ((w & ((np.uint64(1) << drop) - np.uint64(1))) != 0) | (l2 != 0)
    # narrow: borrow `fill` bits from the next limb
    win_b = (w << fill) | (l2 >> (np.uint64(32) - fill))
    sticky_b = (l2 & ((np.uint64(1) << (np.uint64(32) - fill)) - np.uint64(1))) != 0
    window = np.where(wide, win_a, win_b)
    sticky = np.where(wide, sticky_a, sticky_b) | low_sticky
    window |= sticky.astype(np.uint64)
    lsb = 32 * (top - 1) + np.where(wide, drop.astype(np.int64), -fill.astype(np.int64)) - 64
    mant = np.where(any_nz, window.astype(np.int64).astype(np.float64), 0.0)
    return mant, lsb


def crt_to_float(residues, moduli: ModuliSet, exponent=0) -> np.ndarray:
    """``crt_reconstruct(...) * 2**exponent`` rounded once to FP64, vectorized.

    Exact multi-limb integer arithmetic; no Python objects per element.
    """
    digits = garner_digits(residues, moduli)
    ordered = [moduli.moduli[i] for i in moduli._garner_order]
    sign = np.zeros(digits[0].shape, dtype=np.int64)
    for d in reversed(digits):
        sign = np.where(sign == 0, np.sign(d), sign)
    mags = [d * sign for d in digits]
    n_limbs = moduli.product.bit_length() // _LIMB_BITS + 2
    limbs = _mixed_radix_to_limbs(mags, ordered, n_limbs)
    mant, lsb = _limbs_to_float(limbs)
    return sign * np.ldexp(mant, lsb + exponent)


def ozaki2_gemm(a, b, moduli: int | ModuliSet,
                backend: IntegerMatmulBackend | None = None,
                block: int = DEFAULT_BLOCK_K,
                report: dict | None = None) -> np.ndarray:
    """Emulated FP64 ``a @ b`` through ``len(moduli)`` exact int8 GEMMs.

    ``report``, when given, receives quantization diagnostics
    (``elements_quantized``, ``elements_inexact``).
    """
    a = as_real_matrix(a, "a")
    b = as_real_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(f"inner dimensions differ: {a.shape} x {b.shape}")
    if not isinstance(moduli, ModuliSet):
        moduli = choose_moduli(int(moduli))
    backend = backend or default_backend()
    k = a.shape[1]
    qa = quantize(a, moduli, max(k, 1), "row")
    qb = quantize(b, moduli, max(k, 1), "col")
    if report is not None:
        report["elements_quantized"] = report.get("elements_quantized", 0) + a.size + b.size
        report["elements_inexact"] = report.get("elements_inexact", 0) + qa.inexact + qb.inexact
    prod = residue_gemm(to_residues(qa, moduli), to_residues(qb, moduli), backend, block)
    shift = broadcast_scale(qa.scales, "row") + broadcast_scale(qb.scales, "col") - 2 * qa.nu
    return crt_to_float(prod, moduli, shift)
