import math

import numpy as np
import pytest

from coherent_mb.errors import StepControlError
from coherent_mb.pulses import (
    PulseEnvelope, area_theorem, bouguer_intensity, bouguer_transmission, default_dt,
    envelope_fwhm, pulse_area, pulse_bandwidth, pulse_energy, rectangular_pulse,
    rectangular_scales, sech_pulse, sech_scales,
)


class TestPulseEnvelope:

    def test_rejects_nonzero_endpoints(self):
        with pytest.raises(ValueError):
            PulseEnvelope(0.0, 0.1, np.array([1.0, 1.0, 0.0]))
        with pytest.raises(ValueError):
            PulseEnvelope(0.0, 0.1, np.array([0.0, 1.0, 1.0]))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            PulseEnvelope(0.0, 0.1, np.array([0.0, math.nan, 0.0]))

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            PulseEnvelope(0.0, 0.0, np.zeros(4))

    def test_times_and_window(self):
        pulse = PulseEnvelope(2.0, 0.5, np.zeros(5))
        assert pulse.times == pytest.approx([2.0, 2.5, 3.0, 3.5, 4.0])
        assert pulse.window == 2.0

    def test_delayed_keeps_size(self, rect_pulse):
        shifted = rect_pulse.delayed(10)
        assert shifted.size == rect_pulse.size
        assert shifted.t0 == rect_pulse.t0
        assert np.array_equal(shifted.samples[10:], rect_pulse.samples[:-10])
        assert np.all(shifted.samples[:11] == 0.0)

    def test_delayed_refuses_truncation(self):
        pulse = PulseEnvelope(0.0, 0.1, np.array([0.0, 1.0, 1.0, 0.0]))
        with pytest.raises(ValueError):
            pulse.delayed(1)

    def test_quiet_tail(self, rect_pulse):
        # 4 µs pulse in a 16 µs window, last nonzero sample at 4 µs
        assert rect_pulse.quiet_tail_fraction() == pytest.approx(0.75)

    def test_scaled(self, rect_pulse):
        assert pulse_area(rect_pulse.scaled(-1.0)) == pytest.approx(-math.pi)


class TestRectangularPulse:

    def test_pi_pulse(self):
        pulse = rectangular_pulse(math.pi, 7.0, dt=0.01)
        assert pulse.peak == pytest.approx(math.pi / 7.0, rel=1e-12)
        assert pulse_area(pulse) == pytest.approx(math.pi, rel=1e-12)
        assert pulse.window == pytest.approx(42.0)

    def test_large_area(self):
        pulse = rectangular_pulse(3.4 * math.pi, 7.0, dt=0.01)
        assert pulse.peak == pytest.approx(3.4 * math.pi / 7.0, rel=1e-12)
        assert pulse_area(pulse) == pytest.approx(3.4 * math.pi, rel=1e-12)

    def test_energy(self):
        pulse = rectangular_pulse(math.pi, 7.0, dt=0.01)
        assert pulse_energy(pulse) == pytest.approx(math.pi ** 2 / 7.0, rel=1e-12)
        assert pulse_energy(pulse) == pytest.approx(1.41005, rel=1e-3)

    def test_zero_area_is_allowed(self):
        pulse = rectangular_pulse(0.0, 7.0, dt=0.01)
        assert pulse.peak == 0.0

    def test_fwhm_is_duration(self, rect_pulse):
        assert envelope_fwhm(rect_pulse) == pytest.approx(4.0, rel=1e-9)

    def test_too_short(self):
        with pytest.raises(ValueError):
            rectangular_pulse(math.pi, 0.05, dt=0.01)

    def test_window_too_small(self):
        with pytest.raises(ValueError):
            rectangular_pulse(math.pi, 7.0, dt=0.01, window=7.0)


class TestSechPulse:

    def test_peak_on_sample(self):
        pulse = sech_pulse(1.0, t0=0.0, dt=0.005)
        k = int(np.argmax(pulse.samples))
        assert pulse.samples[k] == 2.0
        assert pulse.times[k] == pytest.approx(0.0, abs=1e-9)

    def test_area(self):
        pulse = sech_pulse(1.0, dt=0.005)
        assert pulse_area(pulse) == pytest.approx(2.0 * math.pi, rel=2e-3)

    def test_fwhm(self):
        pulse = sech_pulse(1.0, dt=0.005)
        assert envelope_fwhm(pulse) == pytest.approx(2.0 * math.acosh(2.0), rel=1e-4)
        assert pulse_bandwidth(pulse) == pytest.approx(sech_scales(2 * math.pi, 1.0)[0], rel=1e-4)

    def test_quiet_tail(self):
        pulse = sech_pulse(1.0, dt=0.005)
        assert pulse.quiet_tail_fraction() >= 0.3

    def test_rejects_short_span(self):
        with pytest.raises(ValueError):
            sech_pulse(1.0, span=5.0)


class TestAreaTheorem:

    def test_weak_pulse(self):
        assert area_theorem(0.5 * math.pi, 5.0) == pytest.approx(0.1638028, abs=1e-6)

    def test_large_area_branch(self):
        a_out = area_theorem(3.4 * math.pi, 5.0)
        assert 3.0 * math.pi < a_out < 4.0 * math.pi
        assert math.tan(0.5 * a_out) == pytest.approx(math.exp(-2.5) * math.tan(1.7 * math.pi), rel=1e-9)

    @pytest.mark.parametrize("odd", [1, 3, 5])
    def test_odd_multiples_are_fixed(self, odd):
        assert area_theorem(odd * math.pi, 5.0) == odd * math.pi

    def test_even_multiples_are_fixed(self):
        assert area_theorem(2.0 * math.pi, 5.0) == pytest.approx(2.0 * math.pi, abs=1e-12)

    def test_identity_without_medium(self):
        assert area_theorem(1.3 * math.pi, 0.0) == pytest.approx(1.3 * math.pi, abs=1e-12)

    def test_unstable_at_pi(self):
        eps = 1e-4
        slope = (area_theorem(math.pi + eps, 5.0) - area_theorem(math.pi - eps, 5.0)) / (2 * eps)
        assert slope == pytest.approx(math.exp(2.5), rel=1e-2)
        assert slope > 1.0

    def test_stable_at_two_pi(self):
        eps = 1e-4
        slope = (area_theorem(2 * math.pi + eps, 5.0) - area_theorem(2 * math.pi - eps, 5.0)) / (2 * eps)
        assert slope == pytest.approx(math.exp(-2.5), rel=1e-3)

    def test_continuous_across_three_pi(self):
        eps = 1e-7
        below = area_theorem(3 * math.pi - eps, 5.0)
        above = area_theorem(3 * math.pi + eps, 5.0)
        assert abs(above - below) < 1e-5

    def test_composes_over_depth(self):
        a = 1.3 * math.pi
        assert area_theorem(area_theorem(a, 1.0), 2.0) == pytest.approx(area_theorem(a, 3.0), abs=1e-12)

    def test_rejects_negative_area(self):
        with pytest.raises(ValueError):
            area_theorem(-1.0, 5.0)


class TestOraclesAndScales:

    def test_bouguer(self):
        assert bouguer_transmission(5.0) == pytest.approx(math.exp(-2.5))
        assert bouguer_intensity(5.0) == pytest.approx(math.exp(-5.0))
        with pytest.raises(ValueError):
            bouguer_transmission(-1.0)

    def test_rectangular_scales(self):
        bandwidth, omega_max = rectangular_scales(math.pi, 7.0)
        assert bandwidth == pytest.approx(2 * math.pi / 7.0)
        assert omega_max == pytest.approx(math.pi / 7.0)

    def test_default_dt_rectangular(self):
        assert default_dt(*rectangular_scales(math.pi, 7.0)) == 0.01

    def test_default_dt_soliton(self):
        assert default_dt(*sech_scales(2 * math.pi, 1.0)) == 0.004

    def test_default_dt_impossible(self):
        with pytest.raises(StepControlError):
            default_dt(1e4, 1.0)
