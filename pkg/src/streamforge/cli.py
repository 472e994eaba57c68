"""Benchmark and demo command line.

Subcommands::

    streamforge bench transfer   # bandwidth vs. size: copyin / copyout / bind
    streamforge bench gemm       # offloaded GEMM GFLOP/s, kernel-only and
                                 # including transfers
    streamforge solve run        # run an advection problem from a config file
    streamforge solve converge   # mesh-refinement order study

Benchmark CSV rows share the header ``benchmark,size,reps,median_seconds,
metric``; the metric is GB/s for transfers and GFLOP/s for GEMM. Exit code
0 on success, 1 on a benchmark/solver error, 2 on bad arguments.
"""
from __future__ import annotations

import argparse
import csv
import statistics
import sys
from dataclasses import dataclass

import numpy as np

from .backend import TimingModel
from .config import load_config, solver_config_from_file, timing_model_from_mapping
from .device import OffloadDevice
from .errors import OffloadError
from .kernels import load_library
from .request import RequestKind
from .solver import SolverConfig, estimate_flops_per_step, run_simulation

CSV_HEADER = ["benchmark", "size", "reps", "median_seconds", "metric"]

# Large 3D production cases of this scheme run ~4.6e11 floating point
# operations per time step; printed for scale next to desk-size runs.
REFERENCE_3D_FLOPS_PER_STEP = 4.6e11


@dataclass(frozen=True)
class BenchRecord:
    benchmark: str
    size_param: int
    reps: int
    median_seconds: float
    derived_metric: float

    def row(self) -> list:
        return [
            self.benchmark,
            self.size_param,
            self.reps,
            f"{self.median_seconds:.9e}",
            f"{self.derived_metric:.6f}",
        ]


def _write_csv(path: str, records: list[BenchRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for record in records:
            writer.writerow(record.row())


def _reps_type(text: str) -> int:
    value = int(text)
    if value < 3:
        raise argparse.ArgumentTypeError("reps must be >= 3 (medians need samples)")
    return value


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part.strip()]


def _device_from_args(args, arena_bytes: int) -> OffloadDevice:
    model = None
    realistic = bool(getattr(args, "realistic_timing", False))
    if getattr(args, "device_config", None):
        data = load_config(args.device_config)
        arena_bytes = int(data.get("arena_bytes", arena_bytes))
        model = timing_model_from_mapping(data)
        realistic = bool(data.get("realistic_timing", realistic))
    if getattr(args, "latency_us", None) is not None:
        if getattr(args, "bandwidth", None) is None:
            raise OffloadError("--latency-us requires --bandwidth")
        model = TimingModel(args.latency_us, args.bandwidth)
    if getattr(args, "arena_bytes", None):
        arena_bytes = args.arena_bytes
    device = OffloadDevice(0, arena_bytes=arena_bytes, timing_model=model)
    if realistic:
        device.configure(realistic_timing=True)
    return device


# -- bench transfer -------------------------------------------------------------


def cmd_transfer(args) -> int:
    sizes = []
    size = args.min_bytes
    while size <= args.max_bytes:
        sizes.append(size)
        size *= args.factor
    if not sizes:
        raise OffloadError("empty size range")

    records: list[BenchRecord] = []
    with _device_from_args(args, arena_bytes=max(256 << 20, 4 * args.max_bytes)) as device:
        stream = device.get_default_stream()
        rng = np.random.default_rng(7)
        for size in sizes:
            host = rng.integers(0, 256, size=size, dtype=np.uint8)
            sink = np.empty(size, dtype=np.uint8)

            ptr = stream.allocate_device_memory(size)
            marker = stream.log_marker()
            for _ in range(args.reps):
                stream.transfer_host2device(host, ptr, size)
            stream.sync()
            copyin = [r.duration for r in stream.request_log()[marker:]]

            marker = stream.log_marker()
            for _ in range(args.reps):
                stream.transfer_device2host(ptr, sink, size)
            stream.sync()
            copyout = [r.duration for r in stream.request_log()[marker:]]
            stream.deallocate_device_memory(ptr)
            stream.sync()

            # bind works on typed arrays; use f64 covering the same byte count
            bind_host = rng.standard_normal(max(size // 8, 1))
            bind_nbytes = bind_host.nbytes
            bind_times = []
            for _ in range(args.reps):
                marker = stream.log_marker()
                bound = stream.bind(bind_host)
                stream.sync()
                bind_times.append(
                    sum(r.duration for r in stream.request_log()[marker:])
                )
                del bound
                stream.sync()

            for name, nbytes, samples in (
                ("copyin", size, copyin),
                ("copyout", size, copyout),
                ("bind", bind_nbytes, bind_times),
            ):
                median = statistics.median(samples)
                records.append(
                    BenchRecord(name, size, args.reps, median, nbytes / median / 1e9)
                )
    _write_csv(args.csv, records)
    print(f"wrote {len(records)} records to {args.csv}")
    return 0


# -- bench gemm -----------------------------------------------------------------


def reference_gemm(a: np.ndarray, b: np.ndarray, c: np.ndarray, alpha: float, beta: float):
    """Plain triple-loop GEMM; the independent oracle for spot checks."""
    m, k = a.shape
    _, n = b.shape
    out = np.empty_like(c, dtype=np.float64)
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(k):
                acc += float(a[i, p]) * float(b[p, j])
            out[i, j] = alpha * acc + beta * float(c[i, j])
    return out


def _gemm_handle(device, precision: str):
    lib = load_library(device, "builtin-gemm")
    return lib.get_kernel("gemm_f64" if precision == "f64" else "gemm_f32")


def _spot_check(device, precision: str) -> None:
    rng = np.random.default_rng(11)
    dtype = np.float64 if precision == "f64" else np.float32
    n = 64
    a = rng.standard_normal((n, n)).astype(dtype)
    b = rng.standard_normal((n, n)).astype(dtype)
    c = np.zeros((n, n), dtype=dtype)
    expected = reference_gemm(a, b, c, 1.0, 0.0)
    stream = device.get_default_stream()
    got = c.copy()
    stream.invoke(_gemm_handle(device, precision), a, b, got, n, n, n, 1.0, 0.0)
    stream.sync()
    rel = np.linalg.norm(got.astype(np.float64) - expected) / np.linalg.norm(expected)
    tol = 1e-13 if precision == "f64" else 1e-5
    if rel > tol:
        raise OffloadError(f"GEMM spot check failed: relative error {rel:.3e} > {tol}")


def cmd_gemm(args) -> int:
    if any(size < 16 for size in args.sizes):
        raise OffloadError("matrix sizes must be >= 16")
    dtype = np.dtype(np.float64 if args.precision == "f64" else np.float32)
    arena = max(256 << 20, 6 * max(args.sizes) ** 2 * dtype.itemsize)
    records: list[BenchRecord] = []
    with OffloadDevice(0, arena_bytes=arena) as device:
        _spot_check(device, args.precision)
        stream = device.get_default_stream()
        handle = _gemm_handle(device, args.precision)
        rng = np.random.default_rng(23)
        for n in args.sizes:
            a = rng.standard_normal((n, n)).astype(dtype)
            b = rng.standard_normal((n, n)).astype(dtype)
            c = np.zeros((n, n), dtype=dtype)

            oa, ob, oc = stream.bind(a), stream.bind(b), stream.bind(c, update_device=False)
            stream.sync()
            kernel_times = []
            for _ in range(args.reps):
                marker = stream.log_marker()
                stream.invoke(handle, oa, ob, oc, n, n, n, 1.0, 0.0)
                stream.sync()
                log = stream.request_log()[marker:]
                kernel_times.append(
                    sum(r.duration for r in log if r.kind is RequestKind.INVOKE)
                )
            del oa, ob, oc
            stream.sync()

            total_times = []
            for _ in range(args.reps):
                marker = stream.log_marker()
                ta, tb = stream.bind(a), stream.bind(b)
                tc = stream.bind(c, update_device=False)
                stream.invoke(handle, ta, tb, tc, n, n, n, 1.0, 0.0)
                tc.update_host()
                stream.sync()
                total_times.append(
                    sum(r.duration for r in stream.request_log()[marker:])
                )
                del ta, tb, tc
                stream.sync()

            flops = 2.0 * n**3
            med_kernel = statistics.median(kernel_times)
            med_total = statistics.median(total_times)
            records.append(
                BenchRecord("gemm-kernel", n, args.reps, med_kernel, flops / med_kernel / 1e9)
            )
            records.append(
                BenchRecord("gemm-total", n, args.reps, med_total, flops / med_total / 1e9)
            )
    _write_csv(args.csv, records)
    print(f"wrote {len(records)} records to {args.csv}")
    return 0


# -- solve ----------------------------------------------------------------------


def _write_diag_csv(path: str, diagnostics) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "t", "l2_error", "conserved_integral"])
        for step, t, l2, integral in diagnostics:
            writer.writerow([step, f"{t:.12g}", f"{l2:.12e}", f"{integral:.15e}"])


def cmd_solve_run(args) -> int:
    config = solver_config_from_file(
        args.config,
        backend=args.backend,
        diag_every=args.diag_every,
    )
    result = run_simulation(config)
    if args.csv:
        _write_diag_csv(args.csv, result.diagnostics)
    flops_step = estimate_flops_per_step(config)
    steps_per_s = result.steps / result.wall_seconds if result.wall_seconds > 0 else 0.0
    print(f"steps:            {result.steps}")
    print(f"final time:       {result.t:.6g}")
    if result.l2_error is not None:
        print(f"relative L2 err:  {result.l2_error:.6e}")
    print(f"wall seconds:     {result.wall_seconds:.3f}")
    print(f"steps/s:          {steps_per_s:.2f}")
    print(f"FLOPs per step:   {flops_step:.3e}  (model, counted)")
    print(f"est. GFLOP/s:     {flops_step * steps_per_s / 1e9:.3f}")
    print(
        f"scale context:    a full 3D production case runs "
        f"~{REFERENCE_3D_FLOPS_PER_STEP:.1e} FLOPs/step; this run uses "
        f"{flops_step:.1e}"
    )
    print(f"request counts:   {result.request_counts}")
    if args.csv:
        print(f"diagnostics CSV:  {args.csv}")
    return 0


def cmd_solve_converge(args) -> int:
    rows = []
    print(f"{'p':>3} {'elements':>9} {'L2 error':>14} {'order':>7}")
    for p in args.orders:
        previous = None
        for n_elem in args.meshes:
            h = 1.0 / n_elem
            dt = args.cfl * h / (p + 1) ** 2
            config = SolverConfig(
                p=p,
                n_elements=n_elem,
                dt=dt,
                t_end=1.0,
                x0=0.0,
                x1=1.0,
                a=1.0,
                precision="f64",
            )
            result = run_simulation(config)
            error = result.l2_error
            order = float("nan")
            if previous is not None:
                n_prev, e_prev = previous
                order = np.log(e_prev / error) / np.log(n_elem / n_prev)
            rows.append((p, n_elem, error, order))
            previous = (n_elem, error)
            print(f"{p:>3} {n_elem:>9} {error:>14.6e} {order:>7.3f}")
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["order", "n_elements", "l2_error", "observed_order"])
            for p, n_elem, error, order in rows:
                writer.writerow([p, n_elem, f"{error:.12e}", f"{order:.4f}"])
        print(f"wrote {len(rows)} records to {args.csv}")
    return 0


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamforge", description="offload runtime benchmarks and solver demo"
    )
    top = parser.add_subparsers(dest="group", required=True)

    bench = top.add_parser("bench", help="micro-benchmarks").add_subparsers(
        dest="command", required=True
    )
    transfer = bench.add_parser("transfer", help="transfer bandwidth vs. size")
    transfer.add_argument("--min-bytes", type=int, default=1024)
    transfer.add_argument("--max-bytes", type=int, default=64 << 20)
    transfer.add_argument("--factor", type=int, default=4)
    transfer.add_argument("--reps", type=_reps_type, default=5)
    transfer.add_argument("--csv", default="transfer.csv")
    transfer.add_argument("--latency-us", type=float, default=None,
                          help="timing model latency per request")
    transfer.add_argument("--bandwidth", type=float, default=None,
                          help="timing model bandwidth, bytes/s")
    transfer.add_argument("--realistic-timing", action="store_true",
                          help="sleep so wall clock matches the timing model")
    transfer.add_argument("--arena-bytes", type=int, default=None)
    transfer.add_argument("--device-config", default=None,
                          help="key-value device config file")
    transfer.set_defaults(func=cmd_transfer)

    gemm = bench.add_parser("gemm", help="offloaded GEMM throughput")
    gemm.add_argument("--sizes", type=_int_list, default=[128, 256, 512])
    gemm.add_argument("--reps", type=_reps_type, default=3)
    gemm.add_argument("--precision", choices=("f64", "f32"), default="f64")
    gemm.add_argument("--csv", default="gemm.csv")
    gemm.set_defaults(func=cmd_gemm)

    solve = top.add_parser("solve", help="advection solver").add_subparsers(
        dest="command", required=True
    )
    run = solve.add_parser("run", help="run a problem from a config file")
    run.add_argument("--config", required=True)
    run.add_argument("--csv", default=None, help="diagnostics CSV path")
    run.add_argument("--backend", choices=("intrinsic", "compiled"), default=None)
    run.add_argument("--diag-every", type=int, default=None)
    run.set_defaults(func=cmd_solve_run)

    converge = solve.add_parser("converge", help="mesh-refinement order study")
    converge.add_argument("--orders", type=_int_list, default=[1, 2, 3, 4])
    converge.add_argument("--meshes", type=_int_list, default=[8, 16, 32, 64])
    converge.add_argument("--cfl", type=float, default=0.8)
    converge.add_argument("--csv", default=None)
    converge.set_defaults(func=cmd_solve_converge)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OffloadError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
