"""Command line front end: GEMM accuracy benchmark and Green-function sweep.

Examples::

    ozemu bench-gemm --modes ozaki2:10,ozaki2:12 --sizes 256 --output bench.csv
    ozemu green-fn --modes native,ozaki2:10,ozaki1:7 --output green.csv

Both write CSV.  ``green-fn`` emits a per-node section followed by a blank
line and a per-mode summary section.  ``--no-timing`` writes 0 to the
wall-time columns so that the output is byte-for-byte reproducible.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
import time
from contextlib import contextmanager

import numpy as np

from . import workload
from .dispatch import (EmulationMode, gemm_dispatch, parse_mode_config, stats_snapshot,
                       zgemm_dispatch)
from .errors import EmulationError
from .oracle import extended_complex_gemm, extended_gemm

BENCH_HEADER = ["mode", "param", "n", "max_rel_err", "median_rel_err", "backend_gemms",
                "wall_ns", "seed"]
NODE_HEADER = ["mode", "node_index", "re_z", "im_z", "pct_err"]
SUMMARY_HEADER = ["mode", "param", "n", "max_pct_err", "n_est", "n_est_err", "exact_count",
                  "backend_gemms", "wall_ns", "seed"]
STAIRCASE = ["native"] + [f"ozaki2:{m}" for m in (10, 12, 14, 16, 18)] \
    + [f"ozaki1:{s}" for s in (4, 5, 6, 7, 8)]


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _mode_list(text: str) -> list[EmulationMode]:
    try:
        return [EmulationMode.parse(x) for x in text.split(",") if x.strip()]
    except EmulationError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _env_modes(with_native: bool) -> list[EmulationMode]:
    mode = parse_mode_config(os.environ)
    modes = [EmulationMode.native()] if with_native else []
    return modes + ([mode] if mode not in modes else [])


@contextmanager
def _open_output(path: str):
    if path == "-":
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _fmt(x: float) -> str:
    return repr(float(x))


def bench_records(modes, sizes, seeds, complex_inputs=False, timing=True):
    """Yield one benchmark row (list of strings) per (mode, size, seed)."""
    for n in sizes:
        for seed in seeds:
            rng = np.random.default_rng(seed)
            a = rng.uniform(-1, 1, (n, n))
            b = rng.uniform(-1, 1, (n, n))
            if complex_inputs:
                a = a + 1j * rng.uniform(-1, 1, (n, n))
                b = b + 1j * rng.uniform(-1, 1, (n, n))
                ref, _ = extended_complex_gemm(a, b)
                run = zgemm_dispatch
            else:
                ref, _ = extended_gemm(a, b)
                run = gemm_dispatch
            for mode in modes:
                before = stats_snapshot().backend_gemms
                start = time.perf_counter_ns()
                out = run(mode, a, b)
                wall = time.perf_counter_ns() - start if timing else 0
                gemms = stats_snapshot().backend_gemms - before
                rel = np.abs(out - ref) / np.abs(ref)
                yield [mode.label, str(mode.param), str(n), _fmt(rel.max()),
                       _fmt(np.median(rel)), str(gemms), str(wall), str(seed)]


def run_bench_gemm(args) -> int:
    modes = args.modes or _env_modes(with_native=False)
    with _open_output(args.output) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BENCH_HEADER)
        for row in bench_records(modes, args.sizes, args.seeds, args.complex, not args.no_timing):
            writer.writerow(row)
    return 0


def green_rows(report: workload.SweepReport, seed: int, timing: bool = True):
    """Per-node and summary rows of a sweep report."""
    nodes, summary = [], []
    z = report.contour.nodes
    exact = report.exact_count
    for mode in report.modes:
        label = mode.label
        for j, err in enumerate(report.pct_err[label]):
            nodes.append([label, str(j), _fmt(z[j].real), _fmt(z[j].imag), _fmt(err)])
        stats = report.stats[label]
        n_est = workload.integrated_density(report, mode)
        summary.append([label, str(mode.param), str(report.hamiltonian.n),
                        _fmt(report.max_pct_error(mode)), _fmt(n_est), _fmt(abs(n_est - exact)),
                        str(exact), str(stats.backend_gemms),
                        str(sum(stats.wall_ns.values()) if timing else 0), str(seed)])
    return nodes, summary


def run_green_fn(args) -> int:
    modes = args.modes or (_env_modes(with_native=True) if os.environ.get("GEMM_EMU_MODE")
                           else [EmulationMode.parse(x) for x in STAIRCASE])
    if EmulationMode.native() not in modes:
        raise EmulationError("the mode list must include native (the baseline)")
    h = workload.build_test_hamiltonian(args.n, seed=args.seed)
    contour = workload.contour_nodes(args.e_bottom, args.e_fermi, args.nodes)
    report = workload.green_function_sweep(h, contour, modes, nb=args.nb,
                                           grading_bits=args.grading_bits)
    nodes, summary = green_rows(report, args.seed, not args.no_timing)
    with _open_output(args.output) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(NODE_HEADER)
        writer.writerows(nodes)
        fh.write("\n")
        writer.writerow(SUMMARY_HEADER)
        writer.writerows(summary)
    return 0


def read_green_csv(text: str) -> tuple[list[dict], list[dict]]:
    """Parse ``green-fn`` output into (node rows, summary rows)."""
    first, _, second = text.partition("\n\n")
    return (list(csv.DictReader(io.StringIO(first))),
            list(csv.DictReader(io.StringIO(second))))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ozemu",
                                     description="FP64 GEMM emulation benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench-gemm", help="accuracy and op counts of emulated GEMM")
    bench.add_argument("--modes", type=_mode_list, default=None,
                       help="comma-separated modes, e.g. native,ozaki1:5,ozaki2:16 "
                            "(default: from GEMM_EMU_*)")
    bench.add_argument("--sizes", "--size", type=_int_list, default=[256],
                       help="comma-separated square sizes (default 256)")
    bench.add_argument("--seeds", "--seed", type=_int_list, default=[0],
                       help="comma-separated seeds (default 0)")
    bench.add_argument("--complex", action="store_true", help="benchmark complex GEMM (4M)")
    bench.add_argument("--output", "-o", default="-", help="CSV path, '-' for stdout")
    bench.add_argument("--no-timing", action="store_true", help="write 0 as wall time")
    bench.set_defaults(func=run_bench_gemm)

    green = sub.add_parser("green-fn", help="Green-function contour sweep")
    green.add_argument("--modes", type=_mode_list, default=None,
                       help="comma-separated modes including native "
                            "(default: native plus GEMM_EMU_MODE, else the full staircase)")
    green.add_argument("--n", type=int, default=workload.DEFAULT_N, help="matrix dimension")
    green.add_argument("--nodes", type=int, default=workload.DEFAULT_NODES,
                       help="quadrature points on the contour")
    green.add_argument("--e-bottom", type=float, default=workload.DEFAULT_E_BOTTOM)
    green.add_argument("--e-fermi", type=float, default=workload.DEFAULT_E_FERMI)
    green.add_argument("--nb", type=int, default=workload.DEFAULT_NB, help="LU block size")
    green.add_argument("--grading-bits", type=float, default=workload.DEFAULT_GRADING_BITS,
                       help="channel grading dynamic range in bits (0 disables)")
    green.add_argument("--seed", type=int, default=workload.DEFAULT_SEED)
    green.add_argument("--output", "-o", default="-", help="CSV path, '-' for stdout")
    green.add_argument("--no-timing", action="store_true", help="write 0 as wall time")
    green.set_defaults(func=run_green_fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (EmulationError, OSError, ValueError) as exc:
        print(f"ozemu {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
