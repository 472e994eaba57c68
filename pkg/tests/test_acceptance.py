"""Acceptance suite: every primary criterion at its stated scale and
tolerance, one printed pass/fail line per criterion.

Run with ``pytest tests/test_acceptance.py -v -s``.
"""
import time
from contextlib import contextmanager
from itertools import product

import numpy as np
import pytest

import streamforge as sf
from streamforge import (
    KernelContext,
    KernelParam,
    KernelSpec,
    OffloadDevice,
    SolverConfig,
    TimingModel,
    expand_body,
    generate_pointwise_source,
    load_library,
    per_step_array_transfers,
    prune_unused_params,
    run_simulation,
    suffix_float_constants,
)

from fifo_campaign import run_fifo_campaign
from helpers import transfers_in

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None


@contextmanager
def criterion(number: int, name: str):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {number} ({name}): FAIL")
        raise
    print(f"ACCEPTANCE {number} ({name}): PASS [{time.perf_counter() - start:.1f}s]")


def test_criterion_1_stream_fifo_oracle():
    with criterion(1, "stream FIFO oracle, 10k randomized sequences"):
        start = time.perf_counter()
        requests = run_fifo_campaign(n_sequences=10_000, max_len=50, seed=1234)
        elapsed = time.perf_counter() - start
        assert requests >= 100_000
        assert elapsed < 60.0, f"campaign took {elapsed:.1f}s"


def test_criterion_2_transfer_round_trip():
    with criterion(2, "transfer round trip, 1 B .. 64 MiB with offsets"):
        start = time.perf_counter()
        rng = np.random.default_rng(77)
        with OffloadDevice(0, arena_bytes=128 << 20) as device:
            stream = device.get_default_stream()
            for exponent in range(0, 27):
                size = 1 << exponent
                ptr = stream.allocate_device_memory(size)
                shadow = np.full(size, 0xCD, dtype=np.uint8)
                source = rng.integers(0, 256, size, dtype=np.uint8)
                sink = np.zeros(size, dtype=np.uint8)
                triples = 100 if size > 1 else 4
                for _ in range(triples):
                    nbytes = int(rng.integers(0, size + 1))
                    off_src = int(rng.integers(0, size - nbytes + 1))
                    off_dst = int(rng.integers(0, size - nbytes + 1))
                    stream.transfer_host2device(source, ptr, nbytes, off_src, off_dst)
                    shadow[off_dst : off_dst + nbytes] = source[off_src : off_src + nbytes]
                    nbytes = int(rng.integers(0, size + 1))
                    off_dev = int(rng.integers(0, size - nbytes + 1))
                    off_host = int(rng.integers(0, size - nbytes + 1))
                    stream.transfer_device2host(ptr, sink, nbytes, off_dev, off_host)
                    stream.sync()
                    assert np.array_equal(
                        sink[off_host : off_host + nbytes],
                        shadow[off_dev : off_dev + nbytes],
                    )
                stream.deallocate_device_memory(ptr)
                stream.sync()
        elapsed = time.perf_counter() - start
        assert elapsed < 30.0, f"round-trip sweep took {elapsed:.1f}s"


def test_criterion_3_marshalling_law():
    with criterion(3, "marshalling law, 2h+s automatic transfers"):
        sf.register_intrinsic_library("acceptance-sink", {"sink": lambda buffers: None})
        with OffloadDevice(0, arena_bytes=1 << 22) as device:
            stream = device.get_default_stream()
            kernel = load_library(device, "acceptance-sink").get_kernel("sink")
            rng = np.random.default_rng(5)
            for h, s, o in product(range(5), repeat=3):
                if h + s + o > 16:
                    continue
                args = (
                    [rng.standard_normal(8) for _ in range(h)]
                    + [float(i) + 0.5 for i in range(s)]
                    + [stream.bind(rng.standard_normal(8)) for _ in range(o)]
                )
                order = rng.permutation(len(args))
                args = [args[i] for i in order]
                stream.sync()
                marker = stream.log_marker()
                stream.invoke(kernel, *args)
                stream.sync()
                log = stream.request_log()[marker:]
                assert len(transfers_in(log, auto=True)) == 2 * h + s
                assert transfers_in(log, auto=False) == []


def _oracle_gemm():
    if numba is not None:
        @numba.njit(cache=False)
        def triple_loop(a, b, c, alpha, beta, out):
            m, k = a.shape
            n = b.shape[1]
            for i in range(m):
                for j in range(n):
                    acc = 0.0
                    for p in range(k):
                        acc += a[i, p] * b[p, j]
                    out[i, j] = alpha * acc + beta * c[i, j]

        def oracle(a, b, c, alpha, beta):
            out = np.empty_like(c)
            triple_loop(a, b, c, alpha, beta, out)
            return out

        return oracle

    def oracle(a, b, c, alpha, beta):  # pragma: no cover - numba missing
        return alpha * np.einsum("ik,kj->ij", a, b) + beta * c

    return oracle


def test_criterion_4_gemm_correctness():
    with criterion(4, "GEMM vs. triple-loop oracle, 200 random shapes"):
        start = time.perf_counter()
        oracle = _oracle_gemm()
        rng = np.random.default_rng(99)
        with OffloadDevice(0, arena_bytes=64 << 20) as device:
            stream = device.get_default_stream()
            library = load_library(device, "builtin-gemm")
            kernels = {
                "f64": library.get_kernel("gemm_f64"),
                "f32": library.get_kernel("gemm_f32"),
            }
            cases = [("f64", 1e-13)] * 150 + [("f32", 1e-5)] * 50
            for precision, tol in cases:
                dtype = np.float64 if precision == "f64" else np.float32
                m, n, k = (int(v) for v in rng.integers(1, 513, size=3))
                a = rng.standard_normal((m, k)).astype(dtype)
                b = rng.standard_normal((k, n)).astype(dtype)
                c = rng.standard_normal((m, n)).astype(dtype)
                alpha = float(rng.standard_normal())
                beta = float(rng.standard_normal())
                expected = oracle(
                    a.astype(np.float64), b.astype(np.float64),
                    c.astype(np.float64), alpha, beta,
                )
                stream.invoke(kernels[precision], a, b, c, m, n, k, alpha, beta)
                stream.sync()
                rel = np.linalg.norm(c.astype(np.float64) - expected) / max(
                    np.linalg.norm(expected), 1e-300
                )
                assert rel <= tol, f"{precision} {m}x{n}x{k}: rel={rel:.3e}"
        elapsed = time.perf_counter() - start
        assert elapsed < 120.0, f"GEMM sweep took {elapsed:.1f}s"


def _divergence_spec(source_exprs):
    return KernelSpec(
        "finalize_divergence",
        (
            KernelParam("t", "scalar"),
            KernelParam("tdivf", "inout", per_point_extent=5),
            KernelParam("ploc", "in", per_point_extent=3),
            KernelParam("rcpdjac", "in"),
        ),
        (
            "%for i in nvars",
            "tdivf[${i}] = -rcpdjac*tdivf[${i}] + ${ex};",
            "%endfor",
        ),
        KernelContext(ndims=3, nvars=5, precision="f64",
                      extra_exprs={"ex": source_exprs}),
    )


def test_criterion_5_codegen():
    with criterion(5, "codegen pruning, suffixing, determinism"):
        # no source terms: the time and position parameters vanish
        bare = _divergence_spec(None)
        pruned = prune_unused_params(bare, expand_body(bare))
        assert [p.name for p in pruned] == ["tdivf", "rcpdjac"]

        # a source referencing the simulation time keeps t, not ploc
        timed = _divergence_spec(["sin(t)"] * 5)
        pruned = prune_unused_params(timed, expand_body(timed))
        assert [p.name for p in pruned] == ["t", "tdivf", "rcpdjac"]

        # suffixing is idempotent and leaves integers alone
        text = "u = 0.5*u + 1e-3*sin(2.0*x) + 7; v = .25*pow(x, 2.);"
        once = suffix_float_constants(text, "f32")
        assert suffix_float_constants(once, "f32") == once
        assert "+ 7;" in once and "0.5f" in once and "1e-3f" in once

        # generation is deterministic, byte for byte
        first = generate_pointwise_source(_divergence_spec(["sin(t)"] * 5))
        second = generate_pointwise_source(_divergence_spec(["sin(t)"] * 5))
        assert first.text == second.text
        assert first.text.count("SF_EXPORT void ") == 1


def test_criterion_6_fr_solver():
    with criterion(6, "free stream, conservation, convergence order"):
        start = time.perf_counter()

        # (a) free-stream preservation, 1e-13 per step
        for p, n_elem in ((1, 8), (2, 16), (4, 12)):
            h = 1.0 / n_elem
            cfg = SolverConfig(p=p, n_elements=n_elem, dt=0.5 * h / (p + 1) ** 2,
                               t_end=0.0, ic="2.5")
            with sf.AdvectionSolver(cfg) as solver:
                steps = 25
                for _ in range(steps):
                    solver.rk4_step()
                drift = np.abs(solver.fetch_state() - 2.5).max()
                assert drift <= 1e-13 * steps, f"p={p}: drift {drift:.2e}"

        # (b) conserved integral, 1e-12 relative drift per step
        h = 1.0 / 16
        cfg = SolverConfig(p=3, n_elements=16, dt=0.8 * h / 16, t_end=0.0,
                           ic="1.5 + 0.3*sin(2*pi*x)")
        with sf.AdvectionSolver(cfg) as solver:
            integral = solver.quadrature_integral(solver.fetch_state())
            for _ in range(200):
                solver.rk4_step()
                fresh = solver.quadrature_integral(solver.fetch_state())
                assert abs(fresh - integral) <= 1e-12 * abs(integral)
                integral = fresh

        # (c) sine advection convergence order >= p + 0.5 across 8 -> 64
        for p in (1, 2, 3, 4):
            errors = []
            for n_elem in (8, 16, 32, 64):
                h = 1.0 / n_elem
                cfg = SolverConfig(p=p, n_elements=n_elem,
                                   dt=0.8 * h / (p + 1) ** 2, t_end=1.0)
                errors.append(run_simulation(cfg).l2_error)
            order = np.log2(errors[0] / errors[-1]) / 3
            assert order >= p + 0.5, f"p={p}: observed order {order:.2f}"

        elapsed = time.perf_counter() - start
        assert elapsed < 180.0, f"solver suite took {elapsed:.1f}s"


def test_criterion_7_offload_everything():
    with criterion(7, "no per-step host transfers in a full run"):
        n_elem, p = 46, 4
        h = 1.0 / n_elem
        cfg = SolverConfig(p=p, n_elements=n_elem, dt=0.8 * h / (p + 1) ** 2,
                           t_end=1.0)
        result = run_simulation(cfg)
        assert result.steps > 1000
        assert per_step_array_transfers(result) == 0
        assert result.l2_error < 1e-8  # one full period, high order


def test_criterion_8_timing_model_bandwidth_shape():
    with criterion(8, "modeled bandwidth: monotone, saturating"):
        latency_us, bandwidth = 50.0, 6e9
        model = TimingModel(latency_us, bandwidth)
        with OffloadDevice(0, arena_bytes=128 << 20, timing_model=model) as device:
            stream = device.get_default_stream()
            sizes = [1 << k for k in range(10, 27)]
            ptr = stream.allocate_device_memory(max(sizes))
            payload = np.zeros(max(sizes), dtype=np.uint8)
            measured = []
            for size in sizes:
                marker = stream.log_marker()
                stream.transfer_host2device(payload, ptr, size)
                stream.sync()
                measured.append(stream.request_log()[marker].duration)
            effective = [size / seconds for size, seconds in zip(sizes, measured)]
            assert all(b1 < b2 for b1, b2 in zip(effective, effective[1:]))
            assert effective[-1] >= 0.9 * bandwidth
            for size, seconds in zip(sizes, measured):
                closed_form = latency_us * 1e-6 + size / bandwidth
                assert seconds == pytest.approx(closed_form, rel=0.05)
            stream.deallocate_device_memory(ptr)
            stream.sync()
