"""Green-function workload: blocked LU inversion of resolvents on a contour.

A synthetic Hermitian ``H`` with a known spectrum stands in for the
physical operator.  For each Gauss-Legendre node ``z`` on a semicircle in
the upper half plane the resolvent ``G(z) = (zI - H)^-1`` is computed by a
right-looking blocked LU whose trailing updates go through a (possibly
emulated) complex GEMM.  The scalar ``g(z) = Tr G(z)`` is compared with the
native run, and ``-(1/pi) Im sum_j w_j g(z_j)`` counts the eigenvalues
inside the energy window.

Channel grading
---------------
Real multiple-scattering matrices mix angular-momentum channels whose
entries differ by orders of magnitude.  To mimic that, the matrix actually
inverted is ``D (zI - H) D^-1`` with a diagonal ``D`` that assigns index
``i`` to channel ``l = floor(sqrt(i mod 16))`` (1, 3, 5, 7 members for
l = 0..3) and scales it by ``2**(-grading_bits * l / 3)``.  The trace of the
inverse is unchanged in exact arithmetic and pivoted LU in FP64 barely
notices the scaling, but the emulated GEMMs, which share one exponent per
row or column, lose the low-order bits of the small channels.  Set
``grading_bits=0`` for an unscaled resolvent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .dispatch import EmulationMode, GemmStats, stats_snapshot, zgemm_dispatch
from .errors import ContractViolation, SingularMatrix

#: gemm(a, b, alpha, beta, c) -> c, updated in place
ComplexGemm = Callable[[np.ndarray, np.ndarray, complex, complex, np.ndarray], np.ndarray]

DEFAULT_N = 200
DEFAULT_NB = 64
DEFAULT_NODES = 30
DEFAULT_SEED = 2024
DEFAULT_E_BOTTOM = -1.1
DEFAULT_E_FERMI = 0.2
DEFAULT_GRADING_BITS = 24
CHANNEL_PERIOD = 16


@dataclass(frozen=True)
class SpectrumSpec:
    """Eigenvalues uniform on ``[lo, hi]`` with an optional empty ``gap``."""

    lo: float = -1.0
    hi: float = 1.0
    gap: tuple[float, float] | None = (0.1, 0.3)

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ContractViolation(f"empty spectrum interval [{self.lo}, {self.hi}]")
        if self.gap is not None:
            g0, g1 = self.gap
            if not self.lo <= g0 < g1 <= self.hi or (g0, g1) == (self.lo, self.hi):
                raise ContractViolation(f"gap {self.gap} must be a proper subinterval")

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.gap is None:
            return np.sort(rng.uniform(self.lo, self.hi, n))
        g0, g1 = self.gap
        width = (self.hi - self.lo) - (g1 - g0)
        u = self.lo + rng.uniform(0.0, width, n)
        return np.sort(np.where(u < g0, u, u + (g1 - g0)))


@dataclass(frozen=True)
class TestHamiltonian:
    n: int
    h: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray = field(repr=False)
    seed: int | None = None

    __test__ = False  # not a pytest class

    def count_in(self, e_bottom: float, e_fermi: float) -> int:
        """Eigenvalues strictly inside ``(e_bottom, e_fermi)``."""
        ev = self.eigenvalues
        return int(np.count_nonzero((ev > e_bottom) & (ev < e_fermi)))


def random_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary from the QR of a complex Gaussian matrix."""
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / math.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def build_test_hamiltonian(n: int, spectrum: SpectrumSpec | None = None, seed: int = DEFAULT_SEED,
                           eigenvalues: Sequence[float] | None = None) -> TestHamiltonian:
    """``H = Q diag(lambda) Q^H`` with a seeded random unitary ``Q``.

    ``eigenvalues`` overrides sampling from ``spectrum``.  The result is
    symmetrized so that ``H == H^H`` holds exactly.
    """
    if n < 2:
        raise ContractViolation(f"n must be at least 2, got {n}")
    rng = np.random.default_rng(seed)
    if eigenvalues is None:
        ev = (spectrum or SpectrumSpec()).sample(n, rng)
    else:
        ev = np.sort(np.asarray(eigenvalues, dtype=np.float64))
        if ev.shape != (n,) or not np.isfinite(ev).all():
            raise ContractViolation(f"need {n} finite eigenvalues")
    q = random_unitary(n, rng)
    h = (q * ev) @ q.conj().T
    h = 0.5 * (h + h.conj().T)
    return TestHamiltonian(n, h, ev, seed)


@dataclass(frozen=True)
class ContourSpec:
    e_bottom: float
    e_fermi: float
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def count(self) -> int:
        return len(self.nodes)


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre abscissae and weights on ``[-1, 1]``."""
    return np.polynomial.legendre.leggauss(n)


def contour_nodes(e_bottom: float, e_fermi: float, n: int = DEFAULT_NODES) -> ContourSpec:
    """Quadrature on the upper semicircle from ``e_bottom`` to ``e_fermi``.

    ``z(theta) = c + r exp(i theta)`` with ``theta`` running from pi to 0;
    the weights include ``dz/dtheta`` so that ``sum(w f(z))`` approximates
    the path integral of ``f``.
    """
    if not e_bottom < e_fermi:
        raise ContractViolation(f"need e_bottom < e_fermi, got {e_bottom}, {e_fermi}")
    if n < 2:
        raise ContractViolation(f"need at least 2 nodes, got {n}")
    x, w = gauss_legendre(n)
    c = 0.5 * (e_bottom + e_fermi)
    r = 0.5 * (e_fermi - e_bottom)
    theta = 0.5 * math.pi * (1.0 - x)
    phase = np.exp(1j * theta)
    z = c + r * phase
    dz_dx = 1j * r * phase * (-0.5 * math.pi)
    return ContourSpec(e_bottom, e_fermi, z, w * dz_dx)


def channel_scales(n: int, grading_bits: float) -> np.ndarray:
    """Diagonal of the channel grading ``D`` (powers of two when ``3 | grading_bits``)."""
    i = np.arange(n) % CHANNEL_PERIOD
    ell = np.floor(np.sqrt(i))
    return np.exp2(-grading_bits * ell / 3.0)


def native_zgemm(a, b, alpha, beta, c):
    """Plain numpy complex GEMM in the ``ComplexGemm`` calling convention."""
    prod = a @ b
    c[...] = alpha * prod + beta * c if beta != 0 else alpha * prod
    return c


def mode_gemm(mode: EmulationMode) -> ComplexGemm:
    """Complex GEMM routed through the dispatcher under ``mode``."""
    def gemm(a, b, alpha, beta, c):
        return zgemm_dispatch(mode, a, b, alpha, beta, c)
    gemm.mode = mode
    return gemm


def trailing_update_count(n: int, nb: int) -> int:
    """GEMM calls issued by :func:`blocked_lu_invert`: one per panel but the last."""
    return max(0, -(-n // nb) - 1)


@dataclass
class LUInverse:
    inverse: np.ndarray
    residual: float
    gemm_calls: int


def _panel_factor(a: np.ndarray, j0: int, j1: int, piv: np.ndarray) -> None:
    """Unblocked partial-pivoting LU of columns ``j0:j1`` of ``a`` (all rows below ``j0``).

    Row swaps are applied to the whole matrix.
    """
    for j in range(j0, j1):
        p = j + int(np.argmax(np.abs(a[j:, j])))
        if a[p, j] == 0:
            raise SingularMatrix(f"zero pivot in column {j}")
        piv[j] = p
        if p != j:
            a[[j, p], :] = a[[p, j], :]
        a[j + 1:, j] /= a[j, j]
        if j + 1 < j1:
            a[j + 1:, j + 1:j1] -= np.multiply.outer(a[j + 1:, j], a[j, j + 1:j1])


def blocked_lu_invert(m, nb: int = DEFAULT_NB, gemm: ComplexGemm | None = None) -> LUInverse:
    """Invert ``m`` through a right-looking blocked LU with partial pivoting.

    Panel factorization and triangular solves run in native FP64; every
    trailing update ``A22 <- A22 - L21 U12`` is one call of ``gemm`` with
    ``alpha=-1, beta=1``.  Returns the inverse and ``max|m inv - I|``.
    """
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ContractViolation(f"need a square matrix, got shape {m.shape}")
    if nb < 1:
        raise ContractViolation(f"block size must be positive, got {nb}")
    if not np.isfinite(m).all():
        raise ContractViolation("matrix has non-finite entries")
    gemm = gemm or native_zgemm
    n = m.shape[0]
    a = np.array(m, dtype=np.complex128, order="C")
    piv = np.arange(n)
    calls = 0
    for j0 in range(0, n, nb):
        j1 = min(n, j0 + nb)
        _panel_factor(a, j0, j1, piv)
        if j1 < n:
            a[j0:j1, j1:] = scipy.linalg.solve_triangular(
                a[j0:j1, j0:j1], a[j0:j1, j1:], lower=True, unit_diagonal=True)
            a22 = np.ascontiguousarray(a[j1:, j1:])
            gemm(np.ascontiguousarray(a[j1:, j0:j1]), np.ascontiguousarray(a[j0:j1, j1:]),
                 -1.0, 1.0, a22)
            a[j1:, j1:] = a22
            calls += 1

    if np.any(np.diagonal(a) == 0):
        raise SingularMatrix("zero pivot in U")
    rhs = np.eye(n, dtype=np.complex128)
    for j in range(n):
        if piv[j] != j:
            rhs[[j, piv[j]], :] = rhs[[piv[j], j], :]
    y = scipy.linalg.solve_triangular(a, rhs, lower=True, unit_diagonal=True)
    inv = scipy.linalg.solve_triangular(a, y, lower=False)
    residual = float(np.abs(m @ inv - np.eye(n)).max())
    return LUInverse(inv, residual, calls)


def percent_error(value, reference) -> np.ndarray:
    """``100 |value - reference| / |reference|``."""
    value = np.asarray(value)
    reference = np.asarray(reference)
    return 100.0 * np.abs(value - reference) / np.abs(reference)


@dataclass
class SweepReport:
    """Per-node traces and errors for a set of modes, relative to native."""

    hamiltonian: TestHamiltonian = field(repr=False)
    contour: ContourSpec = field(repr=False)
    reference: str
    modes: list[EmulationMode]
    traces: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    pct_err: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    elementwise_err: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    #: ``max|(zI - H) G - I|`` per node, in ungraded coordinates
    residuals: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    stats: dict[str, GemmStats] = field(default_factory=dict, repr=False)
    gemm_calls: dict[str, int] = field(default_factory=dict)

    def max_pct_error(self, mode) -> float:
        return float(np.max(self.pct_err[_label(mode)]))

    def n_est(self, mode) -> float:
        return integrated_density(self, mode)

    @property
    def exact_count(self) -> int:
        return self.hamiltonian.count_in(self.contour.e_bottom, self.contour.e_fermi)


def _label(mode) -> str:
    return mode if isinstance(mode, str) else mode.label


def _stats_delta(before: GemmStats, after: GemmStats) -> GemmStats:
    out = GemmStats()
    for name in vars(out):
        if name == "wall_ns":
            out.wall_ns = {k: v - before.wall_ns.get(k, 0) for k, v in after.wall_ns.items()
                           if v != before.wall_ns.get(k, 0)}
        else:
            setattr(out, name, getattr(after, name) - getattr(before, name))
    return out


def _invert_all(h, contour, mode, nb, grading_bits):
    n = h.n
    d = channel_scales(n, grading_bits)
    gemm = native_zgemm if mode is None else mode_gemm(mode)
    traces = np.empty(contour.count, dtype=np.complex128)
    inverses = []
    residuals = np.empty(contour.count)
    calls = 0
    for j, z in enumerate(contour.nodes):
        resolvent = z * np.eye(n) - h.h
        graded = (d[:, None] * resolvent) / d[None, :]
        res = blocked_lu_invert(graded, nb, gemm)
        g = (res.inverse / d[:, None]) * d[None, :]
        traces[j] = np.trace(g)
        inverses.append(g)
        residuals[j] = np.abs(resolvent @ g - np.eye(n)).max()
        calls += res.gemm_calls
    return traces, inverses, residuals, calls


def green_function_sweep(h: TestHamiltonian, contour: ContourSpec, modes: Sequence[EmulationMode],
                         nb: int = DEFAULT_NB, grading_bits: float = DEFAULT_GRADING_BITS
                         ) -> SweepReport:
    """Run every mode over every contour node; native is the ground truth.

    The native baseline is computed once through the dispatcher (so its GEMM
    calls are counted too) and reused for all comparisons.
    """
    modes = list(modes)
    native = EmulationMode.native()
    if native not in modes:
        raise ContractViolation("the mode list must include native as the baseline")
    report = SweepReport(h, contour, native.label, modes)
    ref_inverses = None
    ordered = [native] + [m for m in modes if m != native]
    for mode in ordered:
        before = stats_snapshot()
        traces, inverses, residuals, calls = _invert_all(h, contour, mode, nb, grading_bits)
        report.stats[mode.label] = _stats_delta(before, stats_snapshot())
        if ref_inverses is None:
            ref_traces, ref_inverses = traces, inverses
        report.traces[mode.label] = traces
        report.pct_err[mode.label] = percent_error(traces, ref_traces)
        report.elementwise_err[mode.label] = np.array(
            [np.abs(x - y).max() / np.abs(y).max() for x, y in zip(inverses, ref_inverses)])
        report.residuals[mode.label] = residuals
        report.gemm_calls[mode.label] = calls
    return report


def integrated_density(report: SweepReport, mode) -> float:
    """``-(1/pi) Im sum_j w_j g(z_j)``: the eigenvalue count in the window."""
    g = report.traces[_label(mode)]
    return float(-np.imag(np.sum(report.contour.weights * g)) / math.pi)


def integrated_density_of(g: np.ndarray, contour: ContourSpec) -> float:
    """Same as :func:`integrated_density` for a bare array of traces."""
    return float(-np.imag(np.sum(contour.weights * np.asarray(g))) / math.pi)


def default_setup(seed: int = DEFAULT_SEED, n: int = DEFAULT_N, nodes: int = DEFAULT_NODES,
                  e_bottom: float = DEFAULT_E_BOTTOM, e_fermi: float = DEFAULT_E_FERMI
                  ) -> tuple[TestHamiltonian, ContourSpec]:
    """Hamiltonian and contour of the default configuration."""
    return build_test_hamiltonian(n, seed=seed), contour_nodes(e_bottom, e_fermi, nodes)
