import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ozemu.backend import CountingBackend, FloatCarrierBackend, LoopBackend
from ozemu.errors import ContractViolation, ModuliBudgetTooSmall, NonFiniteInput
from ozemu.oracle import exact_int_gemm, extended_gemm, rational_gemm
from ozemu.ozaki2 import (ModuliSet, center_residue, choose_moduli, crt_reconstruct,
                          crt_to_float, ozaki2_gemm, quantize, residue_gemm,
                          to_residues)

GREEDY_10 = (256, 255, 253, 251, 247, 241, 239, 233, 229, 227)


def brute_greedy(count):
    chosen = []
    for c in range(256, 1, -1):
        if len(chosen) == count:
            break
        if all(math.gcd(c, x) == 1 for x in chosen):
            chosen.append(c)
    return tuple(chosen)


def brute_crt(residues, moduli):
    big = math.prod(moduli)
    for x in range(-(big // 2) + (big % 2 == 0), big // 2 + 1):
        if all((x - r) % m == 0 for r, m in zip(residues, moduli)):
            return x


def test_greedy_moduli():
    assert choose_moduli(1).moduli == (256,)
    assert choose_moduli(3).moduli == (256, 255, 253)
    assert choose_moduli(10).moduli == GREEDY_10 == brute_greedy(10)
    for count in range(1, 25):
        assert choose_moduli(count).moduli == brute_greedy(count)


def test_ten_moduli_budget():
    ms = choose_moduli(10)
    assert ms.product_bits >= 79
    assert ms.nu(256) == 35


@pytest.mark.parametrize("count", range(1, 25))
@pytest.mark.parametrize("k", [1, 2, 3, 64, 256, 1000, 2**16])
def test_worst_case_fits_half_range(count, k):
    ms = choose_moduli(count)
    nu = ms.nu(k)
    if nu <= 0:
        return
    assert k * (2**nu - 1) ** 2 < ms.product // 2
    # and the budget is tight: one more bit could overflow
    assert k * (2 ** (nu + 1) - 1) ** 2 >= ms.product // 2 // 4


def test_moduli_validation():
    with pytest.raises(ContractViolation):
        ModuliSet((6, 9))
    with pytest.raises(ContractViolation):
        ModuliSet((257,))
    with pytest.raises(ContractViolation):
        choose_moduli(25)


def test_budget_too_small():
    with pytest.raises(ModuliBudgetTooSmall):
        ozaki2_gemm(np.ones((2, 2**12)), np.ones((2**12, 2)), 1)


def test_center_residue_fits_int8():
    r = center_residue(np.arange(-600, 600), 256)
    assert r.min() == -128 and r.max() == 127
    assert center_residue(128, 256) == -128
    r = center_residue(np.arange(-600, 600), 255)
    assert r.min() == -127 and r.max() == 127


def test_crt_examples():
    assert crt_reconstruct([1, 0, 2], ModuliSet((3, 5, 7))) == -5 == brute_crt((1, 0, 2), (3, 5, 7))
    assert crt_reconstruct([0, 0, 0], ModuliSet((3, 5, 7))) == 0
    ms = ModuliSet((256, 255))
    assert crt_reconstruct([41 % 256, 41 % 255], ms) == 41


@given(st.lists(st.integers(0, 104), min_size=1, max_size=5))
def test_crt_small_brute_force(values):
    mods = (3, 5, 7)
    ms = ModuliSet(mods)
    for v in values:
        x = brute_crt([v % m for m in mods], mods)
        assert crt_reconstruct([v % m for m in mods], ms) == x


@given(st.integers(1, 24), st.data())
def test_crt_round_trip_and_rounding(count, data):
    ms = choose_moduli(count)
    big = ms.product
    xs = data.draw(st.lists(st.integers(-(big // 2) + 1, big // 2), min_size=1, max_size=6))
    res = [np.array([x % m for x in xs]) for m in ms.moduli]
    back = crt_reconstruct(res, ms)
    assert list(back) == xs
    p = data.draw(st.integers(-60, 60))
    expected = [float(Fraction(x) * Fraction(2) ** p) for x in xs]
    np.testing.assert_array_equal(crt_to_float(res, ms, p), expected)


def test_crt_half_range_endpoint():
    ms = choose_moduli(2)
    top = ms.product // 2
    res = [np.array([top % m, (-top + 1) % m]) for m in ms.moduli]
    assert list(crt_reconstruct(res, ms)) == [top, -top + 1]


def test_quantize_integers_are_fixed_points(rng):
    ms = choose_moduli(10)
    a = rng.integers(-2**20, 2**20, (8, 16)).astype(np.float64)
    qa = quantize(a, ms, 16)
    assert qa.inexact == 0
    np.testing.assert_array_equal(qa.dequantize(), a)
    assert np.abs(qa.integers).max() < 2.0**qa.nu


def test_identity_quantized_reproduces_residues(rng):
    ms = choose_moduli(6)
    b = rng.integers(-2**20, 2**20, (5, 7)).astype(np.float64)
    qi = quantize(np.eye(5), ms, 5)
    qb = quantize(b, ms, 5, "col")
    prod = residue_gemm(to_residues(qi, ms), to_residues(qb, ms))
    direct = to_residues(qb, ms).residues
    for m, p, d in zip(ms.moduli, prod, direct):
        # the identity rows carry a factor 2**(nu-1): compare up to that unit
        unit = pow(2, qi.nu - 1, m)
        np.testing.assert_array_equal(center_residue(p.astype(np.int64), m),
                                      center_residue(d.astype(np.int64) * unit, m))


@given(st.integers(0, 2**32), st.integers(1, 4))
def test_residue_products_match_oracle(seed, block):
    rng = np.random.default_rng(seed)
    ms = choose_moduli(12)
    a = rng.standard_normal((4, 11)) * np.exp2(rng.integers(-10, 10, (4, 11)))
    b = rng.standard_normal((11, 3))
    qa, qb = quantize(a, ms, 11, "row"), quantize(b, ms, 11, "col")
    exact = exact_int_gemm(qa.integers, qb.integers)
    for backend in (FloatCarrierBackend(), LoopBackend()):
        prod = residue_gemm(to_residues(qa, ms), to_residues(qb, ms), backend, block=block)
        for m, p in zip(ms.moduli, prod):
            assert p.dtype == np.int8
            np.testing.assert_array_equal(p.astype(object) % m, exact % m)
    assert (crt_reconstruct(prod, ms) == exact).all()


def test_integer_inputs_exact(rng):
    a = rng.integers(-2**20, 2**20, (20, 64)).astype(np.float64)
    b = rng.integers(-2**20, 2**20, (64, 24)).astype(np.float64)
    exact = np.vectorize(float)(exact_int_gemm(a, b))
    for count in (10, 14, 18):
        np.testing.assert_array_equal(ozaki2_gemm(a, b, count), exact)


@given(st.integers(0, 2**32), st.integers(2, 18))
def test_output_is_rounded_product_of_quantized_inputs(seed, count):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((3, 6)) * np.exp2(rng.integers(-20, 20, (3, 6)))
    b = rng.standard_normal((6, 4))
    ms = choose_moduli(count)
    try:
        qa, qb = quantize(a, ms, 6, "row"), quantize(b, ms, 6, "col")
    except ModuliBudgetTooSmall:
        return
    expected = np.vectorize(float)(rational_gemm(qa.dequantize(), qb.dequantize()))
    np.testing.assert_array_equal(ozaki2_gemm(a, b, ms), expected)


def test_identity_reproduces_quantized(rng):
    b = rng.standard_normal((6, 5))
    out = ozaki2_gemm(np.eye(6), b, 16)
    assert np.abs(out - b).max() <= 2.0**-40 * np.abs(b).max()


def test_backend_call_count(rng):
    backend = CountingBackend(FloatCarrierBackend())
    ozaki2_gemm(rng.standard_normal((4, 9)), rng.standard_normal((9, 2)), 13, backend=backend)
    assert backend.calls == 13


def test_report_counts(rng):
    report = {}
    ozaki2_gemm(rng.standard_normal((4, 9)), rng.standard_normal((9, 2)), 10, report=report)
    assert report["elements_quantized"] == 36 + 18
    assert 0 < report["elements_inexact"] <= 54


def test_nonfinite_rejected():
    with pytest.raises(NonFiniteInput):
        ozaki2_gemm(np.array([[np.nan]]), np.ones((1, 1)), 10)


def test_staircase_slope(rng):
    a = rng.uniform(-1, 1, (96, 256))
    b = rng.uniform(-1, 1, (256, 96))
    hi, _ = extended_gemm(a, b)
    errs = [np.max(np.abs(ozaki2_gemm(a, b, m) - hi) / np.abs(hi)) for m in (10, 12, 14, 16, 18)]
    assert all(x > y for x, y in zip(errs[:3], errs[1:4]))
    for x, y in zip(errs[:2], errs[1:3]):
        assert 10.0 <= x / y <= 1e4
    assert errs[4] <= errs[3] <= 2.0**-52


@given(st.integers(0, 2**32))
def test_monotone_refinement(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1, 1, (10, 40))
    b = rng.uniform(-1, 1, (40, 8))
    hi, _ = extended_gemm(a, b)
    errs = [np.abs(ozaki2_gemm(a, b, m) - hi).max() for m in (10, 12, 14, 16, 18)]
    floor = np.abs(hi).max() * 2.0**-53
    for x, y in zip(errs, errs[1:]):
        assert y <= x or y <= floor


@given(st.integers(0, 2**32), st.integers(-40, 40), st.integers(8, 20))
def test_row_scale_invariance(seed, p, count):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((5, 7))
    b = rng.standard_normal((7, 3))
    base = ozaki2_gemm(a, b, count)
    a2 = a.copy()
    a2[1] *= 2.0**p
    scaled = ozaki2_gemm(a2, b, count)
    np.testing.assert_array_equal(scaled[1], base[1] * 2.0**p)
    np.testing.assert_array_equal(scaled[0], base[0])
