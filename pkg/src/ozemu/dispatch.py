"""Mode selection, GEMM entry points and statistics.

The emulation mode is described by :class:`EmulationMode`.  It is either
passed explicitly or read once from the environment::

    GEMM_EMU_MODE      native | ozaki1 | ozaki2      (default native)
    GEMM_EMU_SLICES    1..8                          (ozaki1, default 7)
    GEMM_EMU_STRATEGY  eager | full                  (ozaki1, default eager)
    GEMM_EMU_MODULI    1..24                         (ozaki2, default 16)
    GEMM_EMU_STATS     path of a key=value stats file written at exit

Only the product ``a @ b`` is emulated; ``alpha`` and ``beta`` are applied
afterwards in plain FP64.
"""

from __future__ import annotations

import atexit
import os
import threading
import time
from dataclasses import dataclass, field, fields
from typing import Mapping

import numpy as np

from .backend import CountingBackend, IntegerMatmulBackend, default_backend
from .errors import ConfigError, ContractViolation, NonFiniteInput
from .ozaki1 import MAX_SLICES, ProductStrategy, ozaki1_gemm
from .ozaki2 import MAX_MODULI, ozaki2_gemm
from .zgemm import complex_gemm

ENV_MODE = "GEMM_EMU_MODE"
ENV_SLICES = "GEMM_EMU_SLICES"
ENV_STRATEGY = "GEMM_EMU_STRATEGY"
ENV_MODULI = "GEMM_EMU_MODULI"
ENV_STATS = "GEMM_EMU_STATS"

DEFAULT_SLICES = 7
DEFAULT_MODULI = 16

NATIVE, OZAKI1, OZAKI2 = "native", "ozaki1", "ozaki2"


@dataclass(frozen=True)
class EmulationMode:
    """Which engine computes the FP64 product.

    Build with :meth:`native`, :meth:`ozaki1`, :meth:`ozaki2` or
    :meth:`parse`.
    """

    kind: str = NATIVE
    slices: int | None = None
    strategy: ProductStrategy | None = None
    moduli: int | None = None

    def __post_init__(self):
        if self.kind == NATIVE:
            if self.slices is not None or self.moduli is not None:
                raise ContractViolation("native mode takes no parameters")
        elif self.kind == OZAKI1:
            if not isinstance(self.slices, int) or not 1 <= self.slices <= MAX_SLICES:
                raise ContractViolation(f"ozaki1 slices must lie in [1, {MAX_SLICES}], got {self.slices}")
            object.__setattr__(self, "strategy", ProductStrategy(self.strategy or ProductStrategy.EAGER))
            if self.moduli is not None:
                raise ContractViolation("ozaki1 takes no moduli count")
        elif self.kind == OZAKI2:
            if not isinstance(self.moduli, int) or not 1 <= self.moduli <= MAX_MODULI:
                raise ContractViolation(f"ozaki2 moduli must lie in [1, {MAX_MODULI}], got {self.moduli}")
            if self.slices is not None:
                raise ContractViolation("ozaki2 takes no slice count")
        else:
            raise ContractViolation(f"unknown mode kind {self.kind!r}")

    @classmethod
    def native(cls) -> "EmulationMode":
        return cls(NATIVE)

    @classmethod
    def ozaki1(cls, slices: int, strategy=ProductStrategy.EAGER) -> "EmulationMode":
        return cls(OZAKI1, slices=slices, strategy=ProductStrategy(strategy))

    @classmethod
    def ozaki2(cls, moduli: int) -> "EmulationMode":
        return cls(OZAKI2, moduli=moduli)

    @classmethod
    def parse(cls, text: str) -> "EmulationMode":
        """Parse a label such as ``native``, ``ozaki1:5``, ``ozaki1:7:full`` or ``ozaki2:16``."""
        parts = text.strip().lower().split(":")
        try:
            if parts == [NATIVE]:
                return cls.native()
            if parts[0] == OZAKI1 and len(parts) in (2, 3):
                strategy = parts[2] if len(parts) == 3 else "eager"
                return cls.ozaki1(int(parts[1]), ProductStrategy(strategy))
            if parts[0] == OZAKI2 and len(parts) == 2:
                return cls.ozaki2(int(parts[1]))
        except ValueError as exc:
            raise ContractViolation(f"bad mode {text!r}: {exc}") from None
        raise ContractViolation(f"bad mode {text!r}")

    @property
    def label(self) -> str:
        if self.kind == OZAKI1:
            suffix = ":full" if self.strategy is ProductStrategy.FULL else ""
            return f"ozaki1:{self.slices}{suffix}"
        if self.kind == OZAKI2:
            return f"ozaki2:{self.moduli}"
        return NATIVE

    @property
    def param(self) -> int:
        """Slice count, moduli count, or 0 for native."""
        return self.slices or self.moduli or 0

    @property
    def mantissa_bits(self) -> int | None:
        """Advertised significand width; only defined for the slice scheme."""
        if self.kind == OZAKI1:
            return 8 * self.slices - 1
        if self.kind == NATIVE:
            return 53
        return None

    @property
    def backend_gemms_per_real(self) -> int:
        """Low-precision GEMMs issued by one real emulated product."""
        if self.kind == OZAKI1:
            return self.strategy.pair_count(self.slices)
        if self.kind == OZAKI2:
            return self.moduli
        return 0

    def __str__(self):
        return self.label


def _parse_int(env, name, default, lo, hi):
    raw = env.get(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw.strip())
    except ValueError:
        raise ConfigError(name, raw, "not an integer") from None
    if not lo <= value <= hi:
        raise ConfigError(name, raw, f"must lie in [{lo}, {hi}]")
    return value


def parse_mode_config(environment: Mapping[str, str]) -> EmulationMode:
    """Build the emulation mode from ``GEMM_EMU_*`` variables; native when unset."""
    raw = environment.get(ENV_MODE)
    kind = (raw or NATIVE).strip().lower() or NATIVE
    if kind == NATIVE:
        return EmulationMode.native()
    if kind == OZAKI1:
        s = _parse_int(environment, ENV_SLICES, DEFAULT_SLICES, 1, MAX_SLICES)
        raw_strategy = environment.get(ENV_STRATEGY, "eager")
        try:
            strategy = ProductStrategy(raw_strategy.strip().lower())
        except ValueError:
            raise ConfigError(ENV_STRATEGY, raw_strategy, "expected eager or full") from None
        return EmulationMode.ozaki1(s, strategy)
    if kind == OZAKI2:
        return EmulationMode.ozaki2(_parse_int(environment, ENV_MODULI, DEFAULT_MODULI, 1, MAX_MODULI))
    raise ConfigError(ENV_MODE, raw, "expected native, ozaki1 or ozaki2")


_config_lock = threading.Lock()
_config: tuple[EmulationMode, str | None] | None = None


def _read_config() -> tuple[EmulationMode, str | None]:
    global _config
    with _config_lock:
        if _config is None:
            _config = (parse_mode_config(os.environ), os.environ.get(ENV_STATS) or None)
        return _config


def configured_mode() -> EmulationMode:
    """Mode from the process environment, read on first use and then frozen."""
    return _read_config()[0]


@dataclass
class GemmStats:
    """Monotonic counters of the dispatch layer."""

    real_calls: int = 0
    complex_calls: int = 0
    backend_gemms: int = 0
    elements_quantized: int = 0
    elements_inexact: int = 0
    nonfinite_fallbacks: int = 0
    blas_dgemm_calls: int = 0
    blas_zgemm_calls: int = 0
    wall_ns: dict[str, int] = field(default_factory=dict)

    def copy(self) -> "GemmStats":
        out = GemmStats(**{f.name: getattr(self, f.name) for f in fields(self)})
        out.wall_ns = dict(self.wall_ns)
        return out

    def to_text(self) -> str:
        """``key=value`` lines; wall times appear as ``wall_ns.<mode>``."""
        lines = [f"{f.name}={getattr(self, f.name)}" for f in fields(self) if f.name != "wall_ns"]
        lines += [f"wall_ns.{k}={v}" for k, v in sorted(self.wall_ns.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GemmStats":
        out = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition("=")
            if key.startswith("wall_ns."):
                out.wall_ns[key[len("wall_ns."):]] = int(value)
            else:
                setattr(out, key, int(value))
        return out


_stats = GemmStats()
_stats_lock = threading.Lock()


def _record(**delta) -> None:
    with _stats_lock:
        wall = delta.pop("wall", None)
        for key, value in delta.items():
            setattr(_stats, key, getattr(_stats, key) + value)
        if wall is not None:
            label, ns = wall
            _stats.wall_ns[label] = _stats.wall_ns.get(label, 0) + ns


def stats_snapshot() -> GemmStats:
    """Consistent copy of the process-wide counters."""
    with _stats_lock:
        return _stats.copy()


def reset_stats() -> None:
    """Zero all counters (tests and benchmark drivers only)."""
    global _stats
    with _stats_lock:
        _stats = GemmStats()


def record_blas_call(routine: str) -> None:
    """Count one intercepted BLAS call, including quick returns."""
    _record(**{f"blas_{routine}_calls": 1})


def dump_stats(path: str) -> None:
    with open(path, "w") as fh:
        fh.write(stats_snapshot().to_text())


@atexit.register
def _dump_at_exit() -> None:
    path = _config[1] if _config is not None else os.environ.get(ENV_STATS)
    if path:
        try:
            dump_stats(path)
        except OSError:
            pass


def native_gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """FP64 ``a @ b`` summed in ascending ``k``, one rounding per step.

    Bitwise equal to the textbook triple loop ``c += a[i, p] * b[p, j]``.
    """
    m, k = a.shape
    c = np.zeros((m, b.shape[1]))
    for p in range(k):
        c += np.multiply.outer(a[:, p], b[p, :])
    return c


def _as_operand(x, name, dtype) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2:
        raise ContractViolation(f"{name} must be 2-D, got shape {x.shape}")
    return x.astype(dtype, copy=False)


class _RealEngine:
    """Mode-bound real GEMM that accumulates work counters for one call."""

    def __init__(self, mode: EmulationMode, backend: IntegerMatmulBackend | None):
        self.mode = mode
        self.backend = CountingBackend(backend or default_backend())
        self.quantized = 0
        self.inexact = 0

    def __call__(self, a, b):
        if self.mode.kind == OZAKI1:
            self.quantized += a.size + b.size
            return ozaki1_gemm(a, b, self.mode.slices, self.mode.strategy, backend=self.backend)
        if self.mode.kind == OZAKI2:
            report: dict = {}
            out = ozaki2_gemm(a, b, self.mode.moduli, backend=self.backend, report=report)
            self.quantized += report["elements_quantized"]
            self.inexact += report["elements_inexact"]
            return out
        return native_gemm(a, b)


def _product(mode, a, b, is_complex, backend):
    """Emulated ``a @ b`` plus the counter deltas it produced."""
    engine = _RealEngine(mode, backend)
    fallback = 0
    try:
        if mode.kind != NATIVE and not (np.isfinite(a).all() and np.isfinite(b).all()):
            raise NonFiniteInput("non-finite operand")
        prod = complex_gemm(a, b, engine) if is_complex else engine(a, b)
    except NonFiniteInput:
        engine = _RealEngine(EmulationMode.native(), backend)
        prod = complex_gemm(a, b, engine) if is_complex else engine(a, b)
        fallback = 1
    delta = dict(backend_gemms=engine.backend.calls, elements_quantized=engine.quantized,
                 elements_inexact=engine.inexact, nonfinite_fallbacks=fallback)
    return prod, delta


def _dispatch(mode, a, b, alpha, beta, c, is_complex, backend):
    dtype = np.complex128 if is_complex else np.float64
    mode = configured_mode() if mode is None else mode
    a = _as_operand(a, "a", dtype)
    b = _as_operand(b, "b", dtype)
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(f"inner dimensions differ: {a.shape} x {b.shape}")
    alpha, beta = dtype(alpha), dtype(beta)
    if not (np.isfinite(alpha) and np.isfinite(beta)):
        raise ContractViolation("alpha and beta must be finite")
    shape = (a.shape[0], b.shape[1])
    if c is None:
        c = np.zeros(shape, dtype=dtype)
    elif not (isinstance(c, np.ndarray) and c.dtype == dtype and c.shape == shape):
        raise ContractViolation(f"c must be a {dtype.__name__} array of shape {shape}")

    start = time.perf_counter_ns()
    prod, delta = _product(mode, a, b, is_complex, backend)
    if beta == 0:
        c[...] = alpha * prod
    else:
        c[...] = alpha * prod + beta * c
    elapsed = time.perf_counter_ns() - start
    delta["complex_calls" if is_complex else "real_calls"] = 1
    _record(wall=(mode.label, elapsed), **delta)
    return c


def gemm_dispatch(mode: EmulationMode | None, a, b, alpha=1.0, beta=0.0, c=None,
                  backend: IntegerMatmulBackend | None = None) -> np.ndarray:
    """``c <- alpha * (a @ b) + beta * c`` with the product computed under ``mode``.

    ``mode=None`` uses the configured (environment) mode.  ``c`` is updated
    in place when given, else allocated; with ``beta == 0`` its old content
    is ignored, as in BLAS.  NaN or Inf operands make the call fall back to
    native arithmetic and are counted in ``nonfinite_fallbacks``.
    """
    return _dispatch(mode, a, b, alpha, beta, c, False, backend)


def zgemm_dispatch(mode: EmulationMode | None, a, b, alpha=1.0, beta=0.0, c=None,
                   backend: IntegerMatmulBackend | None = None) -> np.ndarray:
    """Complex counterpart of :func:`gemm_dispatch` (four real products per call)."""
    return _dispatch(mode, a, b, alpha, beta, c, True, backend)
