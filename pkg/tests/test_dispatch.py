import os
import subprocess
import sys
import threading

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ozemu.dispatch import (EmulationMode, GemmStats, gemm_dispatch, native_gemm,
                            parse_mode_config, stats_snapshot, zgemm_dispatch)
from ozemu.errors import ConfigError, ContractViolation
from ozemu.ozaki1 import ProductStrategy

ALL_MODES = (["native"] + [f"ozaki1:{s}" for s in range(1, 9)]
             + [f"ozaki1:{s}:full" for s in range(1, 9)]
             + [f"ozaki2:{m}" for m in range(2, 25)])


def run_python(code, **env):
    full_env = {k: v for k, v in os.environ.items() if not k.startswith("GEMM_EMU_")}
    full_env.update(env)
    return subprocess.run([sys.executable, "-c", code], env=full_env, capture_output=True,
                          text=True, check=True).stdout


def triple_loop(a, b):
    m, k = a.shape
    n = b.shape[1]
    c = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for p in range(k):
                s += a[i, p] * b[p, j]
            c[i, j] = s
    return c


def test_config_defaults_to_native():
    assert parse_mode_config({}) == EmulationMode.native()
    assert parse_mode_config({"GEMM_EMU_MODE": "NATIVE"}) == EmulationMode.native()


def test_config_examples():
    assert parse_mode_config({"GEMM_EMU_MODE": "ozaki2", "GEMM_EMU_MODULI": "16"}) == EmulationMode.ozaki2(16)
    mode = parse_mode_config({"GEMM_EMU_MODE": "ozaki1", "GEMM_EMU_SLICES": "7"})
    assert mode == EmulationMode.ozaki1(7) and mode.mantissa_bits == 55
    mode = parse_mode_config({"GEMM_EMU_MODE": "ozaki1", "GEMM_EMU_SLICES": "4",
                              "GEMM_EMU_STRATEGY": "full"})
    assert mode.strategy is ProductStrategy.FULL and mode.label == "ozaki1:4:full"


def test_config_parameter_defaults():
    assert parse_mode_config({"GEMM_EMU_MODE": "ozaki1"}) == EmulationMode.ozaki1(7)
    assert parse_mode_config({"GEMM_EMU_MODE": "ozaki2"}) == EmulationMode.ozaki2(16)


@pytest.mark.parametrize("env, variable", [
    ({"GEMM_EMU_MODE": "ozaki3"}, "GEMM_EMU_MODE"),
    ({"GEMM_EMU_MODE": "ozaki1", "GEMM_EMU_SLICES": "9"}, "GEMM_EMU_SLICES"),
    ({"GEMM_EMU_MODE": "ozaki1", "GEMM_EMU_SLICES": "seven"}, "GEMM_EMU_SLICES"),
    ({"GEMM_EMU_MODE": "ozaki1", "GEMM_EMU_STRATEGY": "lazy"}, "GEMM_EMU_STRATEGY"),
    ({"GEMM_EMU_MODE": "ozaki2", "GEMM_EMU_MODULI": "0"}, "GEMM_EMU_MODULI"),
    ({"GEMM_EMU_MODE": "ozaki2", "GEMM_EMU_MODULI": "25"}, "GEMM_EMU_MODULI"),
])
def test_config_errors_name_the_variable(env, variable):
    with pytest.raises(ConfigError) as info:
        parse_mode_config(env)
    assert info.value.variable == variable
    assert variable in str(info.value)


@pytest.mark.parametrize("label", ALL_MODES)
def test_label_round_trip(label):
    assert EmulationMode.parse(label).label == label


@pytest.mark.parametrize("bad", ["", "ozaki1", "ozaki1:0", "ozaki2:25", "ozaki2:3:full", "fp32"])
def test_bad_labels(bad):
    with pytest.raises(ContractViolation):
        EmulationMode.parse(bad)


def test_native_is_bitwise_triple_loop(rng):
    a = rng.standard_normal((7, 33))
    b = rng.standard_normal((33, 5))
    expected = triple_loop(a, b)
    np.testing.assert_array_equal(native_gemm(a, b), expected)
    np.testing.assert_array_equal(gemm_dispatch(EmulationMode.native(), a, b), expected)


def test_zero_product_leaves_c_unchanged(rng):
    c = rng.standard_normal((4, 3))
    before = c.copy()
    out = gemm_dispatch(EmulationMode.ozaki2(10), np.zeros((4, 5)), rng.standard_normal((5, 3)),
                        alpha=1.0, beta=1.0, c=c)
    assert out is c
    np.testing.assert_array_equal(c, before)


def test_beta_zero_ignores_nan_in_c(rng):
    c = np.full((2, 2), np.nan)
    a = rng.standard_normal((2, 3))
    out = gemm_dispatch(EmulationMode.native(), a, a.T, beta=0.0, c=c)
    np.testing.assert_array_equal(out, native_gemm(a, a.T.copy()))


def test_alpha_beta_applied_natively(rng):
    a, b, c = rng.standard_normal((4, 6)), rng.standard_normal((6, 3)), rng.standard_normal((4, 3))
    mode = EmulationMode.ozaki1(5)
    prod = gemm_dispatch(mode, a, b)
    out = gemm_dispatch(mode, a, b, alpha=-0.75, beta=2.5, c=c.copy())
    np.testing.assert_array_equal(out, -0.75 * prod + 2.5 * c)


def test_ozaki2_16_matches_native(rng):
    a, b = rng.standard_normal((256, 256)), rng.standard_normal((256, 256))
    ref = gemm_dispatch(EmulationMode.native(), a, b)
    out = gemm_dispatch(EmulationMode.ozaki2(16), a, b)
    assert np.abs(out - ref).max() / np.abs(ref).max() <= 1e-14


def test_inputs_are_read_only(rng):
    a, b = rng.standard_normal((5, 6)), rng.standard_normal((6, 4))
    a.flags.writeable = False
    b.flags.writeable = False
    for label in ("native", "ozaki1:3", "ozaki2:12"):
        gemm_dispatch(EmulationMode.parse(label), a, b)


def test_precondition_errors(rng):
    a = rng.standard_normal((3, 3))
    with pytest.raises(ContractViolation):
        gemm_dispatch(None, a, np.ones((2, 2)))
    with pytest.raises(ContractViolation):
        gemm_dispatch(None, a, a, alpha=np.inf)
    with pytest.raises(ContractViolation):
        gemm_dispatch(None, a, a, c=np.zeros((3, 3), dtype=np.float32))


def test_examples_from_counters(rng, fresh_stats):
    gemm_dispatch(EmulationMode.ozaki1(5), rng.standard_normal((4, 4)), rng.standard_normal((4, 4)))
    assert stats_snapshot().backend_gemms == 15
    from ozemu.dispatch import reset_stats
    reset_stats()
    z = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    zgemm_dispatch(EmulationMode.ozaki2(10), z, z)
    assert stats_snapshot().backend_gemms == 40


def test_fresh_process_counters_are_zero():
    out = run_python("from ozemu.dispatch import stats_snapshot; print(stats_snapshot().to_text())")
    stats = GemmStats.from_text(out)
    assert stats == GemmStats()


@given(st.lists(st.tuples(st.sampled_from(ALL_MODES), st.booleans()), min_size=1, max_size=6),
       st.integers(0, 2**32))
def test_counter_closed_forms(calls, seed):
    from ozemu.dispatch import reset_stats
    reset_stats()
    rng = np.random.default_rng(seed)
    expected = real = cplx = 0
    for label, is_complex in calls:
        mode = EmulationMode.parse(label)
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
        if is_complex:
            zgemm_dispatch(mode, a + 1j * a, b - 1j * b)
            expected += 4 * mode.backend_gemms_per_real
            cplx += 1
        else:
            gemm_dispatch(mode, a, b)
            expected += mode.backend_gemms_per_real
            real += 1
    s = stats_snapshot()
    assert (s.backend_gemms, s.real_calls, s.complex_calls) == (expected, real, cplx)
    reset_stats()


def test_nonfinite_fallback_is_counted(rng, fresh_stats):
    a = rng.standard_normal((3, 3))
    a[1, 2] = np.inf
    b = rng.standard_normal((3, 2))
    out = gemm_dispatch(EmulationMode.ozaki2(12), a, b)
    np.testing.assert_array_equal(out, native_gemm(a, b))
    s = stats_snapshot()
    assert s.nonfinite_fallbacks == 1 and s.backend_gemms == 0 and s.real_calls == 1


def test_concurrent_calls_keep_consistent_counts(rng, fresh_stats):
    a, b = rng.standard_normal((20, 30)), rng.standard_normal((30, 10))
    expected = gemm_dispatch(EmulationMode.ozaki1(4), a, b)
    errors = []

    def worker():
        for _ in range(5):
            if not np.array_equal(gemm_dispatch(EmulationMode.ozaki1(4), a, b), expected):
                errors.append("mismatch")

    threads = [threading.Thread(target=worker) for _ in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    s = stats_snapshot()
    assert not errors
    assert s.real_calls == 31 and s.backend_gemms == 31 * 10


def test_stats_text_round_trip():
    s = GemmStats(real_calls=3, backend_gemms=7, wall_ns={"ozaki2:16": 12, "native": 5})
    assert GemmStats.from_text(s.to_text()) == s


def test_environment_read_once_and_dumped_at_exit(tmp_path):
    path = tmp_path / "stats.txt"
    code = """
import os
import numpy as np
from ozemu.dispatch import configured_mode, gemm_dispatch
print(configured_mode().label)
os.environ["GEMM_EMU_MODE"] = "native"
print(configured_mode().label)
gemm_dispatch(None, np.ones((2, 3)), np.ones((3, 2)))
"""
    out = run_python(code, GEMM_EMU_MODE="ozaki1", GEMM_EMU_SLICES="3",
                     GEMM_EMU_STATS=str(path)).split()
    assert out == ["ozaki1:3", "ozaki1:3"]
    stats = GemmStats.from_text(path.read_text())
    assert stats.real_calls == 1 and stats.backend_gemms == 6
    assert set(stats.wall_ns) == {"ozaki1:3"}
