"""The advection solver: semi-discrete operator, RK4, conservation, and the
offload-everything property."""
import shutil

import numpy as np
import pytest

from streamforge import (
    AdvectionSolver,
    InvalidArgumentError,
    NumericalDivergenceError,
    RequestKind,
    SolverConfig,
    build_operators,
    per_step_array_transfers,
    run_simulation,
    upwind_flux,
)

HAVE_CC = shutil.which("cc") is not None


def reference_rhs(u, ops, h, a, source=None):
    """Independent host-side evaluation of the semi-discrete operator."""
    faces = ops.interp_to_faces @ u  # row 0: left face, row 1: right face
    flux_left = a * faces[0]
    flux_right = a * faces[1]
    left_state = np.roll(faces[1], 1)  # right face of the previous element
    right_state = faces[0]
    common = upwind_flux(left_state, right_state, a)
    jump_left = common - flux_left
    jump_right = np.roll(common, -1) - flux_right
    dudt = ops.diff @ (a * u) + ops.correction @ np.vstack([jump_left, jump_right])
    dudt *= -2.0 / h
    if source is not None:
        dudt = dudt + source
    return dudt


class TestUpwindFlux:
    def test_positive_speed_takes_left(self):
        assert upwind_flux(2.0, 5.0, 1.0) == 2.0

    def test_negative_speed_takes_right(self):
        assert upwind_flux(2.0, 5.0, -1.0) == -5.0

    def test_zero_speed_is_zero(self):
        assert upwind_flux(2.0, 5.0, 0.0) == 0.0

    def test_device_kernel_agrees(self, rng):
        cfg = SolverConfig(p=1, n_elements=4, dt=0.01, t_end=0.0, a=-0.75,
                           ic="sin(2*pi*x)")
        with AdvectionSolver(cfg) as solver:
            state = solver.fetch_state()
            faces = solver.ops.interp_to_faces @ state
            expected = upwind_flux(np.roll(faces[1], 1), faces[0], -0.75)
            solver.enqueue_rhs(solver.state.u.device_ptr, 0.0, solver.buf["k1"])
            got = np.empty(5)
            solver.stream.transfer_device2host(solver.buf["fc"], got, 5 * 8)
            solver.stream.sync()
            assert got[:4] == pytest.approx(expected, abs=1e-14)
            assert got[4] == got[0]  # periodic wrap slot


class TestInterpToFluxPoints:
    def test_constant_field_hits_faces_exactly(self):
        cfg = SolverConfig(p=3, n_elements=6, dt=0.01, t_end=0.0, ic="4.25")
        with AdvectionSolver(cfg) as solver:
            faces = solver.interp_to_flux_points()
            assert np.all(faces == pytest.approx(4.25, abs=1e-14))

    def test_linear_field_is_exact_at_endpoints(self):
        cfg = SolverConfig(p=2, n_elements=5, dt=0.01, t_end=0.0, ic="2.0*x")
        with AdvectionSolver(cfg) as solver:
            faces = solver.interp_to_flux_points()
            edges = np.linspace(0, 1, 6)
            assert faces[0] == pytest.approx(2 * edges[:-1], abs=1e-13)
            assert faces[1] == pytest.approx(2 * edges[1:], abs=1e-13)

    def test_issues_exactly_one_gemm_invoke(self):
        cfg = SolverConfig(p=2, n_elements=5, dt=0.01, t_end=0.0)
        with AdvectionSolver(cfg) as solver:
            marker = solver.stream.log_marker()
            solver.interp_to_flux_points()
            log = solver.stream.request_log()[marker:]
            invokes = [r for r in log if r.kind is RequestKind.INVOKE]
            assert len(invokes) == 1
            assert solver.gemm_kernel_name in invokes[0].label


class TestCorrectedDivergence:
    def test_constant_field_gives_zero(self):
        cfg = SolverConfig(p=4, n_elements=7, dt=0.01, t_end=0.0, ic="3.0")
        with AdvectionSolver(cfg) as solver:
            dudt = solver.corrected_divergence()
            assert np.abs(dudt).max() <= 1e-13

    def test_matches_independent_host_evaluation(self, rng):
        cfg = SolverConfig(p=3, n_elements=9, dt=0.01, t_end=0.0, a=1.3,
                           ic="sin(2*pi*x) + 0.2*cos(4*pi*x)")
        with AdvectionSolver(cfg) as solver:
            u = solver.fetch_state()
            expected = reference_rhs(u, solver.ops, solver.h, 1.3)
            got = solver.corrected_divergence()
            assert np.abs(got - expected).max() <= 1e-11 * np.abs(expected).max()

    def test_sine_derivative_converges_at_order_p(self):
        errors = []
        for n_elem in (8, 16, 32, 64):
            cfg = SolverConfig(p=3, n_elements=n_elem, dt=0.01, t_end=0.0)
            with AdvectionSolver(cfg) as solver:
                dudt = solver.corrected_divergence()
                exact = -2 * np.pi * np.cos(2 * np.pi * solver._x_host)
                errors.append(np.abs(dudt - exact).max())
        average_order = np.log2(errors[0] / errors[-1]) / 3
        assert average_order >= 2.8  # O(h^p) for p = 3

    def test_pure_source_on_zero_state(self):
        cfg = SolverConfig(p=2, n_elements=4, dt=0.01, t_end=0.0, ic="0.0",
                           source_term="1.0")
        with AdvectionSolver(cfg) as solver:
            dudt = solver.corrected_divergence()
            assert np.all(dudt == 1.0)

    def test_gemm_path_exclusivity(self):
        # interpolation, differentiation, and correction appear in the log
        # only as GEMM kernel invokes: 3 GEMMs per right-hand side
        cfg = SolverConfig(p=3, n_elements=6, dt=0.01, t_end=0.0)
        with AdvectionSolver(cfg) as solver:
            marker = solver.stream.log_marker()
            solver.enqueue_rhs(solver.state.u.device_ptr, 0.0, solver.buf["k1"])
            solver.stream.sync()
            log = solver.stream.request_log()[marker:]
            invokes = [r.label for r in log if r.kind is RequestKind.INVOKE]
            gemms = [l for l in invokes if solver.gemm_kernel_name in l]
            assert len(gemms) == 3
            others = set(invokes) - set(gemms)
            assert others == {
                "invoke:pointwise_flux",
                "invoke:upwind_interface_flux",
                "invoke:face_flux_jumps",
                "invoke:finalize_divergence",
            }


class TestRk4Step:
    def test_zero_rhs_leaves_state_bitwise_unchanged(self):
        cfg = SolverConfig(p=2, n_elements=5, dt=0.05, t_end=0.0, a=0.0,
                           ic="0.5 + 0.25*sin(2*pi*x)")
        with AdvectionSolver(cfg) as solver:
            before = solver.fetch_state()
            solver.rk4_step()
            after = solver.fetch_state()
            assert after.tobytes() == before.tobytes()

    def test_stage_and_combine_kernels_reproduce_the_quartic_growth_factor(self):
        # drive the stage/combine kernels with the identity right-hand side
        # k := u, for which one RK4 step multiplies the state by
        # 1 + dt + dt^2/2 + dt^3/6 + dt^4/24
        dt = 0.1
        cfg = SolverConfig(p=1, n_elements=2, dt=dt, t_end=0.0,
                           ic="1.0 + 0.25*sin(2*pi*x)")
        with AdvectionSolver(cfg) as solver:
            u0 = solver.fetch_state().copy()
            stream = solver.stream
            u = solver.state.u.device_ptr
            buf = solver.buf
            nbytes = solver.npts * 8
            stream.transfer_device2device(u, buf["k1"], nbytes)
            solver._invoke_pw("rk_stage", coef=solver.const["half_dt"],
                              state=u, slope=buf["k1"], staged=buf["us"])
            stream.transfer_device2device(buf["us"], buf["k2"], nbytes)
            solver._invoke_pw("rk_stage", coef=solver.const["half_dt"],
                              state=u, slope=buf["k2"], staged=buf["us"])
            stream.transfer_device2device(buf["us"], buf["k3"], nbytes)
            solver._invoke_pw("rk_stage", coef=solver.const["full_dt"],
                              state=u, slope=buf["k3"], staged=buf["us"])
            stream.transfer_device2device(buf["us"], buf["k4"], nbytes)
            stream.invoke(
                solver.handles["rk_combine"],
                solver.const["npts"],
                solver.const["w_outer"], solver.const["w_inner"],
                solver.const["w_inner"], solver.const["w_outer"],
                buf["k1"], buf["k2"], buf["k3"], buf["k4"], u,
            )
            u1 = solver.fetch_state()
            factor = 1 + dt + dt**2 / 2 + dt**3 / 6 + dt**4 / 24
            assert u1 == pytest.approx(u0 * factor, rel=1e-14)

    def test_sine_advection_one_period_is_accurate(self):
        h = 1.0 / 32
        cfg = SolverConfig(p=3, n_elements=32, dt=0.8 * h / 16, t_end=1.0)
        result = run_simulation(cfg)
        assert result.l2_error < 1e-5

    def test_rk4_matches_host_time_stepping(self):
        cfg = SolverConfig(p=2, n_elements=6, dt=2e-3, t_end=0.0, a=0.9)
        with AdvectionSolver(cfg) as solver:
            u = solver.fetch_state().astype(np.float64)
            ops, h = solver.ops, solver.h
            for _ in range(5):
                solver.rk4_step()
                k1 = reference_rhs(u, ops, h, 0.9)
                k2 = reference_rhs(u + 1e-3 * k1, ops, h, 0.9)
                k3 = reference_rhs(u + 1e-3 * k2, ops, h, 0.9)
                k4 = reference_rhs(u + 2e-3 * k3, ops, h, 0.9)
                u = u + 2e-3 / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            got = solver.fetch_state()
            assert np.abs(got - u).max() <= 1e-12


class TestConservationAndFreeStream:
    def test_free_stream_preserved_per_step(self):
        cfg = SolverConfig(p=4, n_elements=12, dt=1e-3, t_end=0.0, ic="2.5")
        with AdvectionSolver(cfg) as solver:
            steps = 50
            for _ in range(steps):
                solver.rk4_step()
            u = solver.fetch_state()
            assert np.abs(u - 2.5).max() <= 1e-13 * steps

    def test_conserved_integral_drift_per_step(self):
        h = 1.0 / 16
        cfg = SolverConfig(p=3, n_elements=16, dt=0.8 * h / 16, t_end=0.0,
                           ic="1.5 + 0.3*sin(2*pi*x)")
        with AdvectionSolver(cfg) as solver:
            integral = solver.quadrature_integral(solver.fetch_state())
            for _ in range(100):
                solver.rk4_step()
                new_integral = solver.quadrature_integral(solver.fetch_state())
                assert abs(new_integral - integral) <= 1e-12 * abs(integral)
                integral = new_integral


class TestRunSimulation:
    def test_zero_steps_returns_input_bitwise(self):
        cfg = SolverConfig(p=3, n_elements=8, dt=0.01, t_end=0.0)
        result = run_simulation(cfg)
        ops = build_operators(3)
        x = np.empty((4, 8))
        centers = (np.arange(8) + 0.5) / 8
        for j in range(4):
            x[j] = centers + 0.5 / 8 * ops.xi[j]
        assert result.u.tobytes() == np.sin(2 * np.pi * x).tobytes()
        assert result.steps == 0

    def test_no_per_step_host_transfers(self):
        h = 1.0 / 12
        cfg = SolverConfig(p=3, n_elements=12, dt=0.8 * h / 16, t_end=0.1)
        result = run_simulation(cfg)
        assert result.steps > 10
        assert per_step_array_transfers(result) == 0

    def test_diag_cadence_adds_transfers_and_history(self):
        h = 1.0 / 8
        cfg = SolverConfig(p=2, n_elements=8, dt=0.5 * h / 9, t_end=40 * 0.5 * h / 9,
                           diag_every=10)
        result = run_simulation(cfg)
        assert len(result.diagnostics) == 5  # steps 0, 10, 20, 30, final
        assert per_step_array_transfers(result) > 0

    def test_constant_source_adds_exactly_half_t(self):
        # the discrete operator annihilates constants, so the S = 0.5 run
        # differs from the S = 0 run by exactly 0.5 t (to round-off)
        h = 1.0 / 8
        dt = 0.5 * h / 9
        steps = 64
        kwargs = dict(p=2, n_elements=8, dt=dt, t_end=steps * dt)
        with_source = run_simulation(SolverConfig(source_term="0.5", **kwargs))
        without = run_simulation(SolverConfig(**kwargs))
        t = steps * dt
        assert np.abs((with_source.u - without.u) - 0.5 * t).max() <= 1e-12

    def test_time_dependent_source_keeps_time_parameter(self):
        h = 1.0 / 8
        cfg = SolverConfig(p=1, n_elements=8, dt=0.1 * h, t_end=0.5 * h,
                           source_term="0.1*sin(2*pi*t)")
        result = run_simulation(cfg)
        assert result.steps == 5
        assert np.isfinite(result.u).all()

    def test_divergence_is_detected(self):
        import warnings

        cfg = SolverConfig(p=4, n_elements=32, dt=1.0, t_end=100.0)  # wildly unstable
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            with pytest.raises(NumericalDivergenceError):
                run_simulation(cfg)

    def test_f32_precision_runs(self):
        h = 1.0 / 16
        cfg = SolverConfig(p=2, n_elements=16, dt=0.5 * h / 9, t_end=0.1,
                           precision="f32")
        result = run_simulation(cfg)
        assert result.u.dtype == np.float32
        assert result.l2_error < 1e-3

    def test_request_counts_summary(self):
        cfg = SolverConfig(p=1, n_elements=4, dt=1e-3, t_end=5e-3)
        result = run_simulation(cfg)
        assert result.request_counts["invoke"] > 0
        assert result.request_counts["d2d"] > 0


class TestConfigValidation:
    def test_bad_configs_rejected(self):
        with pytest.raises(InvalidArgumentError):
            SolverConfig(p=1, n_elements=1, dt=0.1, t_end=1.0)
        with pytest.raises(InvalidArgumentError):
            SolverConfig(p=1, n_elements=4, dt=0.0, t_end=1.0)
        with pytest.raises(InvalidArgumentError):
            SolverConfig(p=1, n_elements=4, dt=0.1, t_end=1.0, x0=1.0, x1=0.0)
        with pytest.raises(InvalidArgumentError):
            SolverConfig(p=1, n_elements=4, dt=0.1, t_end=1.0, precision="f16")
        with pytest.raises(InvalidArgumentError):
            SolverConfig(p=1, n_elements=4, dt=0.1, t_end=1.0, ic="import os")
        with pytest.raises(InvalidArgumentError):
            SolverConfig(p=1, n_elements=4, dt=0.1, t_end=1.0,
                         source_term="__builtins__")

    def test_order_out_of_range_rejected_at_build(self):
        cfg = SolverConfig(p=11, n_elements=4, dt=0.1, t_end=0.0)
        with pytest.raises(InvalidArgumentError):
            AdvectionSolver(cfg)


@pytest.mark.skipif(not HAVE_CC, reason="no C toolchain")
class TestCompiledBackend:
    def test_compiled_solver_matches_intrinsic_bitwise(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)  # keep the compile cache out of the repo
        h = 1.0 / 8
        kwargs = dict(p=2, n_elements=8, dt=0.5 * h / 9, t_end=20 * 0.5 * h / 9)
        res_intrinsic = run_simulation(SolverConfig(backend="intrinsic", **kwargs))
        res_compiled = run_simulation(SolverConfig(backend="compiled", **kwargs))
        assert res_compiled.u.tobytes() == res_intrinsic.u.tobytes()
