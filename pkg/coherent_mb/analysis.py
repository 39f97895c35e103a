"""
Post-run metrics: transmission, duration/shape, inversion, energy balance
and soliton fidelity
"""
import logging
import math
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING, NamedTuple, Optional, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.signal import correlate, correlation_lags, find_peaks

from coherent_mb.errors import AnalysisError
from coherent_mb.pulses import PulseEnvelope, envelope_fwhm, pulse_area, pulse_energy

if TYPE_CHECKING:
    from coherent_mb.engine import MediumState, RunResult

logger = logging.getLogger(__name__)

LOBE_THRESHOLD = 0.05
LOBE_SEPARATION = 0.5
# Nearly lossless runs are judged against this fraction of the input energy
BALANCE_FLOOR = 0.05
SPECTRUM_CHUNK = 4_000_000

REGION_BOUNDS = ((0.7, 'I'), (1.5, 'II'), (2.5, 'III'), (3.5, 'IV'))


class DurationMetrics(NamedTuple):
    centroid: float
    rms: float
    fwhm: float


@dataclass
class RunMetrics:
    a_in: float
    a_out: float
    area_ratio: Optional[float]
    energy_in: float
    energy_out: float
    rms_duration_in: Optional[float]
    rms_duration_out: Optional[float]
    fwhm_in: Optional[float]
    fwhm_out: Optional[float]
    delay_us: Optional[float]
    tail_lobe_count: int
    resonant_inversion_min: float
    energy_balance_residual: Optional[float]
    region: str
    # False when the output was still ringing at the end of the longest record
    settled: bool = True

    def to_dict(self):
        return asdict(self)


def transmission_factor(input_pulse: PulseEnvelope, output: PulseEnvelope) -> float:
    """A_out / A_in"""
    a_in = pulse_area(input_pulse)
    if a_in == 0.0:
        raise AnalysisError("transmission factor is undefined for a zero-area input")
    return pulse_area(output) / a_in


def duration_metrics(pulse: PulseEnvelope) -> DurationMetrics:
    """
    Intensity-weighted (Ω²) centroid and rms width, plus FWHM of |Ω|

    Raises:
        AnalysisError: zero envelope
    """
    times = pulse.times
    weight = pulse.samples * pulse.samples
    norm = trapezoid(weight, dx=pulse.dt)
    if norm == 0.0:
        raise AnalysisError("duration metrics are undefined for a zero envelope")
    centroid = trapezoid(times * weight, dx=pulse.dt) / norm
    variance = trapezoid((times - centroid) ** 2 * weight, dx=pulse.dt) / norm
    return DurationMetrics(float(centroid), float(math.sqrt(max(variance, 0.0))), envelope_fwhm(pulse))


def inversion_profile(result: 'RunResult') -> Tuple[np.ndarray, float]:
    """Final w(Δ = 0, ζ) and its minimum over depth"""
    row = result.inversion_map[:, result.config.grid.center].copy()
    return row, float(row.min())


def field_spectrum_power(history: np.ndarray, tau: float, deltas: np.ndarray) -> np.ndarray:
    """
    |Ω̃(ζ, Δ)|² of the piecewise-constant drive recorded in `history`

    history[k] is the drive over step k (k >= 1), so
    Ω̃ = Σ_k Ω_k·e^{iΔt_k}·(1 - e^{-iΔτ})/(iΔ). Returns [nz × nΔ].
    """
    drive = history[1:]
    steps = tau * np.arange(1, history.shape[0])
    chunk = max(1, SPECTRUM_CHUNK // max(1, steps.size))
    power = np.empty((history.shape[1], deltas.size))
    for start in range(0, deltas.size, chunk):
        d = deltas[start:start + chunk]
        phase = np.outer(d, steps)
        re = np.cos(phase) @ drive
        im = np.sin(phase) @ drive
        power[:, start:start + chunk] = (re * re + im * im).T
    envelope = tau * np.sinc(deltas * tau / (2.0 * math.pi))
    return power * envelope * envelope


class EnergyBalance(NamedTuple):
    lhs: float
    rhs: float
    residual: float


def energy_balance_terms(result: 'RunResult', state: Optional['MediumState'] = None) -> EnergyBalance:
    """
    Fluence lost by the field against energy stored in the atoms

    LHS = ½[F(0) - F(αL)] with F = Σ_k Ω_k²·τ. RHS is (1/2π)∫dζ of the grid
    quadrature of (w_final + 1), plus, for the renormalized scheme, the linear
    absorption of atoms outside the grid: πF(ζ) - ½Σ_j w_j|Ω̃(ζ, Δ_j)|².
    """
    config = result.config
    if not math.isinf(config.t2):
        raise AnalysisError("energy balance only holds without transverse decay (T2 = inf)")
    if result.history is None:
        raise AnalysisError("energy balance needs the field history (record_history=True)")

    tau = result.tau
    history = result.history
    w_final = (state or result.state).w
    grid = config.grid

    fluence = tau * np.sum(history[1:] ** 2, axis=0)
    lhs = 0.5 * (fluence[0] - fluence[-1])

    stored = (w_final + 1.0) @ grid.weights
    if result.options.renormalize:
        power = field_spectrum_power(history, tau, grid.deltas)
        stored = stored + math.pi * fluence - 0.5 * (power @ grid.weights)
    rhs = trapezoid(stored, dx=config.dzeta) / (2.0 * math.pi)

    scale = max(abs(lhs), BALANCE_FLOOR * 0.5 * fluence[0])
    if scale == 0.0:
        residual = 0.0 if rhs == 0.0 else math.inf
    else:
        residual = abs(lhs - rhs) / scale
    return EnergyBalance(float(lhs), float(rhs), float(residual))


def energy_balance(result: 'RunResult', state: Optional['MediumState'] = None) -> float:
    """Relative residual of the energy balance identity"""
    return energy_balance_terms(result, state).residual


def _shift(samples: np.ndarray, lag: int) -> np.ndarray:
    """Output advanced by `lag` samples: shifted[k] = samples[k + lag]"""
    n = samples.size
    shifted = np.zeros(n)
    if lag >= 0:
        shifted[:n - lag] = samples[lag:]
    else:
        shifted[-lag:] = samples[:n + lag]
    return shifted


def soliton_fidelity(input_pulse: PulseEnvelope, output: PulseEnvelope) -> Tuple[float, float]:
    """
    Whole-sample delay minimizing the relative L2 residual, and that residual

    The delay is positive when the output lags the input. Output samples
    shifted out of the window count against the residual.
    """
    if input_pulse.size != output.size or input_pulse.dt != output.dt:
        raise AnalysisError("soliton fidelity needs envelopes with the same sampling")
    ref = input_pulse.samples
    norm = float(np.linalg.norm(ref))
    if norm == 0.0:
        raise AnalysisError("soliton fidelity is undefined for a zero input")

    samples = output.samples
    n = samples.size
    corr = correlate(samples, ref, mode='full')
    lags = correlation_lags(n, n, mode='full')
    # |shifted output|² for every lag, from the running output energy
    energy = np.concatenate(([0.0], np.cumsum(samples * samples)))
    kept = np.where(lags >= 0, energy[n] - energy[np.clip(lags, 0, n)], energy[np.clip(n + lags, 0, n)])
    lag = int(lags[int(np.argmin(kept - 2.0 * corr))])
    residual = float(np.linalg.norm(_shift(samples, lag) - ref)) / norm
    return lag * input_pulse.dt, residual


def tail_lobe_count(pulse: PulseEnvelope, threshold: float = LOBE_THRESHOLD) -> int:
    """
    Local maxima of |Ω| above threshold·peak after the main peak

    A maximum counts once |Ω| has dropped below threshold·peak since the
    main peak, or when the valley separating it from the main peak is at
    most LOBE_SEPARATION of its own height.
    """
    a = np.abs(pulse.samples)
    peak = a.max()
    if peak == 0.0:
        return 0
    level = threshold * peak
    main = int(np.argmax(a))
    peaks, _ = find_peaks(a, height=level)
    count = 0
    for p in peaks[peaks > main]:
        valley = a[main:p].min()
        if valley < level or valley <= LOBE_SEPARATION * a[p]:
            count += 1
    return count


def region_classify(a_in: float) -> str:
    """I–IV by input area; 'V' beyond the charted regions (>= 3.5π)"""
    if not a_in >= 0:
        raise ValueError(f"input area must be >= 0, got {a_in}")
    units = a_in / math.pi
    for bound, label in REGION_BOUNDS:
        if units < bound:
            return label
    return 'V'


def normalized_profile(input_pulse: PulseEnvelope, output: PulseEnvelope) -> Tuple[np.ndarray, np.ndarray]:
    """
    Output in plot units: time from the input's first nonzero sample over the
    input FWHM, amplitude over the input peak
    """
    peak = input_pulse.peak
    if peak == 0.0:
        raise AnalysisError("cannot normalize against a zero input")
    start = input_pulse.times[int(np.flatnonzero(input_pulse.samples)[0])]
    width = envelope_fwhm(input_pulse)
    return (output.times - start) / width, output.samples / peak


def _durations(pulse: PulseEnvelope) -> Optional[DurationMetrics]:
    try:
        return duration_metrics(pulse)
    except (AnalysisError, ValueError):
        return None


def compute_metrics(result: 'RunResult') -> RunMetrics:
    input_pulse, output = result.input, result.omega_out
    a_in = pulse_area(input_pulse)
    a_out = pulse_area(output)
    d_in = _durations(input_pulse)
    d_out = _durations(output)
    _, w_min = inversion_profile(result)

    residual = None
    if math.isinf(result.config.t2) and result.history is not None:
        residual = energy_balance(result)

    metrics = RunMetrics(
        a_in=a_in,
        a_out=a_out,
        area_ratio=a_out / a_in if a_in != 0.0 else None,
        energy_in=pulse_energy(input_pulse),
        energy_out=pulse_energy(output),
        rms_duration_in=d_in.rms if d_in else None,
        rms_duration_out=d_out.rms if d_out else None,
        fwhm_in=d_in.fwhm if d_in else None,
        fwhm_out=d_out.fwhm if d_out else None,
        delay_us=d_out.centroid - d_in.centroid if d_in and d_out else None,
        tail_lobe_count=tail_lobe_count(output),
        resonant_inversion_min=w_min,
        energy_balance_residual=residual,
        region=region_classify(abs(a_in)),
        settled=result.settled,
    )
    logger.debug(f"[ANALYSIS] {metrics}")
    return metrics
