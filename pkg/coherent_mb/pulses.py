"""
Input pulse construction, area/energy functionals and analytic oracles

Envelopes are real, signed Rabi frequencies (rad/µs) sampled on a uniform
grid (µs). The first and last samples are always zero.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.integrate import trapezoid

from coherent_mb.errors import StepControlError

logger = logging.getLogger(__name__)

# Candidate sample intervals (µs), largest first
DT_LADDER = (0.01, 0.005, 0.004, 0.0025, 0.002, 0.001, 0.0005)
DT_BANDWIDTH_PHASE = 0.01
DT_DRIVE_ANGLE = 0.01

MIN_RECT_SAMPLES = 10
MIN_SECH_SPAN = 10.0
RECT_WINDOW_FACTOR = 6.0
SECH_WINDOW_FACTOR = 1.5

# Odd multiples of π closer than this are treated as exact fixed points
FIXED_POINT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class PulseEnvelope:
    """
    Uniformly sampled envelope Ω(t)

    Args:
        t0: time of the first sample (µs)
        dt: sample interval (µs)
        samples: Rabi frequency values (rad/µs)
    """
    t0: float
    dt: float
    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1 or samples.size < 2:
            raise ValueError("an envelope needs a 1-D array of at least two samples")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("envelope samples must be finite")
        if samples[0] != 0.0 or samples[-1] != 0.0:
            raise ValueError("envelope must begin and end at zero amplitude")
        object.__setattr__(self, 'samples', samples)

    @property
    def size(self) -> int:
        return int(self.samples.size)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.size)

    @property
    def window(self) -> float:
        return self.dt * (self.size - 1)

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self.samples)))

    def scaled(self, factor: float) -> 'PulseEnvelope':
        return PulseEnvelope(self.t0, self.dt, self.samples * factor)

    def delayed(self, steps: int) -> 'PulseEnvelope':
        """Shift the samples `steps` positions later, keeping size and t0"""
        if steps < 0:
            raise ValueError("delay must be a non-negative number of steps")
        if steps == 0:
            return self
        if steps >= self.size or np.any(self.samples[-(steps + 1):] != 0.0):
            raise ValueError(f"cannot delay by {steps} samples without truncating the pulse")
        shifted = np.zeros_like(self.samples)
        shifted[steps:] = self.samples[:-steps]
        return PulseEnvelope(self.t0, self.dt, shifted)

    def quiet_tail_fraction(self) -> float:
        """Fraction of the window after the last nonzero sample"""
        nonzero = np.flatnonzero(self.samples)
        if nonzero.size == 0:
            return 1.0
        return (self.size - 1 - nonzero[-1]) / (self.size - 1)


def _window_samples(window: float, dt: float) -> int:
    return int(round(window / dt)) + 1


def rectangular_pulse(area: float, duration: float, t0: float = 0.0, dt: float = 0.01,
                      window: Optional[float] = None) -> PulseEnvelope:
    """
    Flat-top pulse with one-sample edge ramps

    The flat top spans m = round(duration/dt) samples starting at index 1,
    with Ω0 = area / (m·dt), so both the trapezoid area and the engine's
    piecewise-constant area equal `area`.

    Args:
        area: pulse area (rad), may be zero or negative
        duration: flat-top duration (µs), at least 10·dt
        t0: time of the first (zero) sample
        dt: sample interval (µs)
        window: record length (µs), default 6·duration
    """
    if not (dt > 0 and math.isfinite(dt)):
        raise ValueError(f"dt must be positive, got {dt}")
    if not math.isfinite(area):
        raise ValueError(f"area must be finite, got {area}")
    if not duration >= MIN_RECT_SAMPLES * dt * (1 - 1e-9):
        raise ValueError(
            f"duration {duration} µs is shorter than {MIN_RECT_SAMPLES} samples of {dt} µs"
        )

    m = int(round(duration / dt))
    if window is None:
        window = RECT_WINDOW_FACTOR * duration
    n = _window_samples(window, dt)
    if n < m + 2:
        raise ValueError(f"window {window} µs cannot hold a {duration} µs pulse")

    samples = np.zeros(n)
    samples[1:m + 1] = area / (m * dt)
    logger.debug(f"[PULSE] rectangular area={area:.6g} rad, {m} flat samples, {n} total")
    return PulseEnvelope(t0=t0, dt=dt, samples=samples)


def sech_pulse(tau_s: float, t0: float = 0.0, dt: float = 0.005, span: float = 10.0,
               area: float = 2.0 * math.pi, window: Optional[float] = None) -> PulseEnvelope:
    """
    Hyperbolic-secant pulse Ω(t) = (area/π)·(1/τs)·sech((t - t0)/τs)

    `t0` is the pulse centre and always falls on a sample. The support is
    truncated at |t - t0| ≤ span·τs and starts at the first sample; the rest
    of the window is quiet.

    Args:
        tau_s: sech width (µs)
        t0: centre time (µs)
        dt: sample interval (µs)
        span: truncation half-width in units of tau_s, at least 10
        area: nominal area (rad), 2π for the soliton
        window: record length (µs), default 1.5 × the support 2·span·τs
    """
    if not (tau_s > 0 and math.isfinite(tau_s)):
        raise ValueError(f"tau_s must be positive, got {tau_s}")
    if not (dt > 0 and math.isfinite(dt)):
        raise ValueError(f"dt must be positive, got {dt}")
    if span < MIN_SECH_SPAN:
        raise ValueError(f"span must be >= {MIN_SECH_SPAN}, got {span}")

    half_width = span * tau_s
    if window is None:
        window = SECH_WINDOW_FACTOR * 2.0 * half_width
    n = _window_samples(window, dt)
    k_center = int(round(half_width / dt))
    if n < 2 * k_center + 2:
        raise ValueError(f"window {window} µs cannot hold a sech support of {2 * half_width} µs")

    offsets = (np.arange(n) - k_center) * dt
    inside = np.abs(offsets) <= half_width * (1 + 1e-12)
    samples = np.zeros(n)
    samples[inside] = (area / math.pi) / tau_s / np.cosh(offsets[inside] / tau_s)
    samples[0] = 0.0
    samples[-1] = 0.0
    logger.debug(f"[PULSE] sech tau_s={tau_s:.6g} µs area={area:.6g} rad, {n} samples")
    return PulseEnvelope(t0=t0 - k_center * dt, dt=dt, samples=samples)


def pulse_area(pulse: PulseEnvelope) -> float:
    """Trapezoid integral of Ω (rad)"""
    return float(trapezoid(pulse.samples, dx=pulse.dt))


def pulse_energy(pulse: PulseEnvelope) -> float:
    """Trapezoid integral of Ω² (rad²/µs), proportional to pulse energy"""
    return float(trapezoid(pulse.samples * pulse.samples, dx=pulse.dt))


def area_theorem(a_in: float, alphaL: float) -> float:
    """
    Transmitted area from tan(A_out/2) = e^{-αL/2}·tan(A_in/2)

    The inverse tangent is taken on the branch k = nearest integer to
    A_in/2π, which makes the map continuous and the identity at αL = 0.
    """
    if not math.isfinite(a_in) or a_in < 0:
        raise ValueError(f"input area must be finite and >= 0, got {a_in}")
    if not alphaL >= 0:
        raise ValueError(f"alphaL must be >= 0, got {alphaL}")

    odd = 2.0 * math.floor(a_in / (2.0 * math.pi)) + 1.0
    if abs(a_in - odd * math.pi) <= FIXED_POINT_TOL:
        return a_in

    k = math.floor(a_in / (2.0 * math.pi) + 0.5)
    t = math.exp(-0.5 * alphaL) * math.tan(0.5 * a_in)
    return 2.0 * (math.atan(t) + k * math.pi)


def bouguer_transmission(alphaL: float) -> float:
    """Amplitude transmission e^{-αL/2} of a weak field"""
    if not alphaL >= 0:
        raise ValueError(f"alphaL must be >= 0, got {alphaL}")
    return math.exp(-0.5 * alphaL)


def bouguer_intensity(alphaL: float) -> float:
    return bouguer_transmission(alphaL) ** 2


def envelope_fwhm(pulse: PulseEnvelope) -> float:
    """
    Full width at half maximum of |Ω| (µs)

    Outermost half-maximum crossings, linearly interpolated between samples.
    """
    a = np.abs(pulse.samples)
    peak = a.max()
    if peak == 0.0:
        raise ValueError("fwhm of a zero envelope is undefined")
    half = 0.5 * peak
    above = np.flatnonzero(a >= half)
    i, j = int(above[0]), int(above[-1])

    left = float(i)
    if i > 0:
        left = (i - 1) + (half - a[i - 1]) / (a[i] - a[i - 1])
    right = float(j)
    if j < a.size - 1:
        right = j + (a[j] - half) / (a[j] - a[j + 1])
    return (right - left) * pulse.dt


def pulse_bandwidth(pulse: PulseEnvelope) -> float:
    """Δp = 2π / FWHM(|Ω|) (rad/µs)"""
    return 2.0 * math.pi / envelope_fwhm(pulse)


def rectangular_scales(area: float, duration: float) -> Tuple[float, float]:
    """(Δp, Ωmax) of a rectangular pulse, known before sampling"""
    return 2.0 * math.pi / duration, abs(area) / duration


def sech_scales(area: float, tau_s: float) -> Tuple[float, float]:
    """(Δp, Ωmax) of a sech pulse, known before sampling"""
    fwhm = 2.0 * math.acosh(2.0) * tau_s
    return 2.0 * math.pi / fwhm, abs(area) / (math.pi * tau_s)


def default_dt(bandwidth: float, omega_max: float) -> float:
    """
    Largest ladder interval satisfying Δp·dt ≤ 0.01 and Ωmax·dt ≤ 0.01

    Raises:
        StepControlError: when even the finest interval is too coarse
    """
    for dt in DT_LADDER:
        if bandwidth * dt <= DT_BANDWIDTH_PHASE * (1 + 1e-9) and \
                omega_max * dt <= DT_DRIVE_ANGLE * (1 + 1e-9):
            return dt
    raise StepControlError([
        f"no sample interval down to {DT_LADDER[-1]} µs satisfies "
        f"Δp = {bandwidth:.6g} rad/µs and Ωmax = {omega_max:.6g} rad/µs"
    ])
