import math

import numpy as np
import pytest

from coherent_mb import engine, kernels
from coherent_mb.bloch import BlochNode, DetuningGrid, step_node
from coherent_mb.engine import (
    FieldSlice, MediumConfig, MediumState, Propagator, RunOptions, advance, attenuation_rate,
    convergence_check, default_grid, default_nz, drive_gain, field_update, grid_for_pulse,
    output_is_quiet, polarization, run, step_polarization,
)
from coherent_mb.errors import ConfigError, NumericalAbortError, StepControlError
from coherent_mb.pulses import pulse_area, rectangular_pulse, rectangular_scales
from tests.helpers import small_medium, small_rect

FAST = RunOptions(record_history=False, compute_metrics=False)


@pytest.fixture(scope='module')
def pi_run():
    pulse = small_rect(1.0)
    return run(small_medium(pulse), pulse, RunOptions(compute_metrics=False))


class TestMediumConfig:

    def test_defaults(self, small_grid):
        config = MediumConfig(alphaL=5.0, nz=default_nz(5.0), t2=math.inf, grid=small_grid)
        assert config.nz == 101
        assert config.dzeta == pytest.approx(0.05)
        assert config.zeta[-1] == 5.0

    def test_all_problems_reported(self, small_grid):
        with pytest.raises(ConfigError) as info:
            MediumConfig(alphaL=-1.0, nz=1, t2=0.0, grid=small_grid)
        assert len(info.value.problems) == 3

    def test_slab_spacing_bound(self, small_grid):
        with pytest.raises(ConfigError, match="slab spacing"):
            MediumConfig(alphaL=5.0, nz=11, t2=math.inf, grid=small_grid)

    def test_default_grid(self):
        bandwidth, omega_max = rectangular_scales(math.pi, 7.0)
        grid = default_grid(bandwidth, omega_max, 42.0)
        assert grid.dmax == pytest.approx(10 * bandwidth)
        assert grid.spacing <= math.pi / (4 * 42.0)

    def test_attenuation_rate(self, small_grid):
        assert attenuation_rate(small_grid, 0.01) == 0.5
        # Raw scheme: grid quadrature of sin(Δτ)/Δ, about τ·2Δmax/2π for small τ
        raw = attenuation_rate(small_grid, 1e-4, renormalize=False)
        assert raw == pytest.approx(1e-4 * 2 * 5.0 / (2 * math.pi), rel=1e-4)
        # Step mean of the same response: half of it
        mean = attenuation_rate(small_grid, 1e-4, renormalize=False, step_mean=True)
        assert mean == pytest.approx(0.5 * raw, rel=1e-4)
        assert attenuation_rate(small_grid, 0.01, step_mean=True) == 0.5


class TestPolarization:

    def test_pristine_medium(self, small_grid):
        config = MediumConfig(1.0, 11, math.inf, small_grid)
        state = MediumState.pristine(config)
        assert np.array_equal(polarization(state, config, 0.01), np.zeros(11))

    def test_single_node(self, small_grid):
        config = MediumConfig(1.0, 11, math.inf, small_grid)
        state = MediumState.pristine(config)
        state.v[3, 7] = 0.5
        tau = 0.01
        p = polarization(state, config, tau)
        expected = small_grid.weights[7] * 0.5 * math.cos(small_grid.deltas[7] * tau)
        assert p[3] == pytest.approx(expected, rel=1e-12)
        assert np.count_nonzero(p) == 1

    def test_raw_variant_ignores_convolution_pair(self, small_grid):
        config = MediumConfig(1.0, 11, math.inf, small_grid)
        state = MediumState.pristine(config)
        state.c[:] = 1.0
        assert np.all(polarization(state, config, 0.01) < 0.0)
        assert np.array_equal(polarization(state, config, 0.01, renormalize=False), np.zeros(11))

    def test_wider_grid_agrees_while_pulse_is_on(self):
        pulse = small_rect(0.1)
        base = small_medium(pulse, alphaL=1.0, nz=11)
        wide = base.with_grid(base.grid.widened(2))
        states = {}
        for name, config in (('base', base), ('wide', wide)):
            propagator = Propagator(config, pulse.dt, RunOptions(parallel=False))
            state = MediumState.pristine(config)
            snapshots = []
            for k in range(1, 601):
                propagator.advance(state, propagator.coupled_update(pulse.samples[k], state))
                if k in (200, 400, 600):
                    snapshots.append(polarization(state, config, pulse.dt))
            states[name] = snapshots
        for p_base, p_wide in zip(states['base'], states['wide']):
            assert np.linalg.norm(p_wide - p_base) <= 5e-3 * np.linalg.norm(p_base)


class TestStepPolarization:

    def test_ground_state_is_silent(self, small_grid):
        config = MediumConfig(1.0, 11, math.inf, small_grid)
        free, load = step_polarization(MediumState.pristine(config), config, 0.01)
        assert np.array_equal(free, np.zeros(11))
        assert np.array_equal(load, np.zeros(11))

    def test_single_node(self, small_grid):
        config = MediumConfig(1.0, 11, math.inf, small_grid)
        state = MediumState.pristine(config)
        state.v[3, 7] = 0.5
        state.w[3, 7] = 0.0
        tau = 0.01
        delta = small_grid.deltas[7]
        free, load = step_polarization(state, config, tau)
        weight = small_grid.weights[7]
        assert free[3] == pytest.approx(weight * 0.5 * math.sin(delta * tau) / (delta * tau), rel=1e-12)
        assert load[3] == pytest.approx(weight * (1.0 - math.cos(delta * tau)) / (delta * delta * tau), rel=1e-9)
        assert np.count_nonzero(free) == 1 and np.count_nonzero(load) == 1

    def test_drive_gain_at_resonance(self):
        gain = drive_gain(np.array([0.0, 1e-9, 3.0]), 0.02)
        assert gain[0] == 0.01
        assert gain[1] == pytest.approx(0.01, rel=1e-12)
        assert gain[2] == pytest.approx((1.0 - math.cos(0.06)) / (9.0 * 0.02), rel=1e-12)



class TestFieldUpdate:

    def test_bouguer_without_polarization(self, small_grid):
        config = MediumConfig(5.0, 101, math.inf, small_grid)
        out = field_update(0.3, np.zeros(101), config).omega
        assert out[0] == 0.3
        assert out[-1] == pytest.approx(0.3 * math.exp(-2.5), rel=1e-12)
        assert out == pytest.approx(0.3 * np.exp(-0.5 * config.zeta), rel=1e-12)

    def test_constant_polarization(self, small_grid):
        config = MediumConfig(5.0, 101, math.inf, small_grid)
        out = field_update(0.0, np.full(101, 0.2), config).omega
        exact = -(0.2 / (2 * math.pi)) * 2.0 * (1.0 - np.exp(-0.5 * config.zeta))
        assert out[1:] == pytest.approx(exact[1:], rel=1e-3)

    def test_loaded_update_is_self_consistent(self, small_grid):
        config = MediumConfig(5.0, 101, math.inf, small_grid)
        rng = np.random.default_rng(5)
        p = rng.uniform(-0.3, 0.3, 101)
        load = rng.uniform(0.0, 0.5, 101)
        attenuation = np.exp(-0.5 * config.zeta)
        decay = math.exp(-0.5 * config.dzeta)
        coupled = np.empty(101)
        kernels.field_kernel(0.7, p, load, attenuation, decay, config.dzeta, coupled)
        # feeding back the polarization the field drives reproduces the field
        explicit = np.empty(101)
        kernels.field_kernel(0.7, p - load * coupled, np.zeros(101), attenuation, decay, config.dzeta, explicit)
        assert explicit == pytest.approx(coupled, rel=1e-12, abs=1e-14)

    def test_shape_mismatch(self, small_grid):
        config = MediumConfig(5.0, 101, math.inf, small_grid)
        with pytest.raises(ValueError):
            field_update(0.0, np.zeros(10), config)


class TestAdvance:

    def test_zero_field_keeps_inversion(self, small_grid):
        config = MediumConfig(1.0, 11, math.inf, small_grid)
        state = MediumState.pristine(config)
        rng = np.random.default_rng(3)
        state.u[:] = rng.uniform(-0.5, 0.5, state.shape)
        state.w[:] = rng.uniform(-0.8, -0.5, state.shape)
        before = state.w.copy()
        advance(state, FieldSlice(np.zeros(11), 0.0), config, 0.01)
        assert np.array_equal(state.w, before)

    def test_resonant_pi_area_inverts(self, small_grid):
        config = MediumConfig(1.0, 11, math.inf, small_grid)
        state = MediumState.pristine(config)
        tau = math.pi / 400
        for _ in range(400):
            advance(state, FieldSlice(np.ones(11), 0.0), config, tau)
        assert state.w[:, small_grid.center] == pytest.approx(np.ones(11), abs=1e-10)
        assert state.t_now == pytest.approx(math.pi)

    def test_lattice_matches_single_node(self, small_grid):
        config = MediumConfig(1.0, 11, 3.0, small_grid)
        state = MediumState.pristine(config)
        rng = np.random.default_rng(11)
        fields = rng.uniform(-1.5, 1.5, (30, 11))
        fields[5] = 0.0
        tau = 0.01
        nodes = [BlochNode() for _ in range(small_grid.size)]
        for omega in fields:
            advance(state, FieldSlice(omega.copy(), 0.0), config, tau)
            nodes = [step_node(n, omega[4], d, tau, t2=3.0) for n, d in zip(nodes, small_grid.deltas)]
        for j, node in enumerate(nodes):
            got = state.node(4, j)
            assert (got.u, got.v, got.w, got.c, got.s) == \
                pytest.approx((node.u, node.v, node.w, node.c, node.s), abs=1e-12)

    def test_drive_bound(self, small_grid):
        config = MediumConfig(1.0, 11, math.inf, small_grid)
        with pytest.raises(StepControlError):
            advance(MediumState.pristine(config), FieldSlice(np.full(11, 10.0), 0.0), config, 0.01)


class TestRun:

    def test_weak_pulse_follows_bouguer(self):
        pulse = small_rect(0.01)
        result = run(small_medium(pulse, alphaL=5.0, nz=51), pulse, FAST)
        ratio = pulse_area(result.omega_out) / pulse_area(pulse)
        assert ratio == pytest.approx(math.exp(-2.5), rel=2e-2)

    def test_weak_pulse_is_linear(self):
        pulse = small_rect(0.01)
        config = small_medium(pulse, alphaL=2.0, nz=21)
        one = run(config, pulse, FAST).omega_out.samples
        two = run(config, pulse.scaled(2.0), FAST).omega_out.samples
        assert np.linalg.norm(two - 2.0 * one) <= 1e-3 * np.linalg.norm(two)

    def test_sign_symmetry_is_exact(self, rect_pulse):
        config = small_medium(rect_pulse)
        plus = run(config, rect_pulse, FAST).omega_out.samples
        minus = run(config, rect_pulse.scaled(-1.0), FAST).omega_out.samples
        assert np.array_equal(minus, -plus)

    def test_time_shift_is_exact(self, rect_pulse):
        config = small_medium(rect_pulse)
        k = 40
        nt = rect_pulse.size
        out = run(config, rect_pulse, FAST).omega_out.samples
        shifted = run(config, rect_pulse.delayed(k), FAST).omega_out.samples
        assert np.array_equal(shifted[k:nt - 1], out[:nt - 1 - k])

    def test_resonant_inversion_follows_local_area(self, pi_run):
        w = pi_run.inversion_map[:, pi_run.config.grid.center]
        assert w == pytest.approx(-np.cos(pi_run.local_area), abs=1e-9)

    def test_output_is_an_envelope(self, pi_run):
        assert pi_run.omega_out.samples[0] == 0.0
        assert pi_run.omega_out.samples[-1] == 0.0
        assert pi_run.omega_out.size == pi_run.input.size

    def test_snapshots(self, pi_run):
        for k in (0, 1, 500, pi_run.input.size - 1):
            assert pi_run.snapshot(k).omega[0] == pi_run.input.samples[k]
        assert pi_run.snapshot(0).omega[-1] == 0.0

    def test_snapshot_needs_history(self, rect_pulse):
        result = run(small_medium(rect_pulse), rect_pulse, FAST)
        with pytest.raises(ValueError):
            result.snapshot(3)

    def test_stretched_output_extends_the_record(self):
        pulse = small_rect(1.0, window=5.0)
        config = small_medium(pulse)
        fixed = run(config, pulse, RunOptions(compute_metrics=False, settle=False))
        settled = run(config, pulse, RunOptions(compute_metrics=False))
        assert fixed.input is pulse and fixed.omega_out.size == pulse.size
        assert not output_is_quiet(fixed.omega_out.samples[:-1])

        assert settled.input.size > pulse.size
        assert settled.omega_out.size == settled.input.size == settled.history.shape[0]
        assert np.array_equal(settled.input.samples[:pulse.size], pulse.samples)
        assert not np.any(settled.input.samples[pulse.size:])
        # the extension only appends steps
        assert np.array_equal(settled.omega_out.samples[1:pulse.size - 1], fixed.omega_out.samples[1:-1])
        assert settled.omega_out.samples[-1] == 0.0

    def test_unsettled_output_is_flagged(self, monkeypatch, caplog):
        monkeypatch.setattr(engine, 'SETTLE_LIMIT', 1.0)
        pulse = small_rect(1.0, window=5.0)
        with caplog.at_level('WARNING', logger='coherent_mb.engine'):
            result = run(small_medium(pulse), pulse)
        assert result.input is pulse
        assert not result.settled
        assert not result.metrics.settled
        assert 'not quiet' in caplog.text

    def test_quiet_readout(self):
        t = np.linspace(0.0, 10.0, 1001)
        pulse = np.exp(-((t - 3.0) / 0.5) ** 2)
        assert output_is_quiet(np.zeros(50))
        assert output_is_quiet(pulse)
        assert not output_is_quiet(pulse + 0.02 * np.exp(-t / 20.0))

    def test_coarse_sampling_rejected(self):
        pulse = rectangular_pulse(math.pi, 1.0, dt=0.01)
        with pytest.raises(StepControlError):
            run(small_medium(pulse), pulse, FAST)

    def test_missing_quiet_tail_rejected(self):
        pulse = rectangular_pulse(math.pi, 4.0, dt=0.005, window=4.5)
        with pytest.raises(StepControlError, match="quiet tail"):
            run(small_medium(pulse), pulse, FAST)

    def test_non_finite_field_aborts(self, rect_pulse, monkeypatch):
        def broken(input_sample, p, load, attenuation, step_decay, dzeta, out):
            out[:] = 0.0
            out[2] = math.nan

        monkeypatch.setattr(kernels, 'field_kernel', broken)
        with pytest.raises(NumericalAbortError) as info:
            run(small_medium(rect_pulse), rect_pulse, FAST)
        assert info.value.step == 1
        assert info.value.slab == 2


class TestConvergence:

    def test_zero_pulse_passes_exactly(self):
        pulse = rectangular_pulse(0.0, 4.0, dt=0.005, window=16.0)
        report = convergence_check(small_medium(pulse), pulse, FAST)
        assert [a.axis for a in report.axes] == ['dmax_doubled', 'spacing_halved', 'tau_halved', 'nz_doubled']
        assert report.passed
        assert all(a.area_change == 0.0 and a.envelope_change == 0.0 for a in report.axes)

    def test_reports_failure(self, rect_pulse):
        grid = DetuningGrid.symmetric(8.0, 41)
        report = convergence_check(small_medium(rect_pulse, grid=grid), rect_pulse, FAST, tolerance=1e-12)
        assert not report.passed
        assert len(report.axes) == 4
