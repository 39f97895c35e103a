"""
Per-node atomic state and its exact per-step evolution

Units: time in µs, Rabi frequency and detuning in rad/µs.
Equations of motion: u' = -Δv, v' = Δu - Ωw, w' = Ωv.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from coherent_mb.errors import StepControlError
from coherent_mb import kernels

logger = logging.getLogger(__name__)

# Relative slack on the StepControl bounds (values computed as products of
# floats sitting exactly on a bound must not be rejected)
BOUND_SLACK = 1e-9
MAX_BANDWIDTH_PHASE = 0.01
MAX_DRIVE_ANGLE = 0.02


@dataclass(frozen=True, eq=False)
class DetuningGrid:
    """
    Truncated symmetric detuning grid with trapezoid weights

    deltas[0] = -dmax, deltas[-1] = +dmax, 0 is always a node and the grid is
    mirror-exact: deltas[j] == -deltas[n-1-j].
    """
    deltas: np.ndarray
    weights: np.ndarray
    dmax: float

    @classmethod
    def symmetric(cls, dmax: float, n_points: int) -> 'DetuningGrid':
        if not (dmax > 0 and math.isfinite(dmax)):
            raise ValueError(f"dmax must be positive and finite, got {dmax}")
        if n_points < 3 or n_points % 2 == 0:
            raise ValueError(f"n_points must be odd and >= 3, got {n_points}")

        m = (n_points - 1) // 2
        half = dmax * np.arange(m + 1, dtype=float) / m
        half[-1] = dmax
        deltas = np.concatenate((-half[:0:-1], half))

        step = dmax / m
        weights = np.full(n_points, step)
        weights[0] = weights[-1] = 0.5 * step
        return cls(deltas=deltas, weights=weights, dmax=float(dmax))

    @classmethod
    def from_spacing(cls, dmax: float, spacing: float) -> 'DetuningGrid':
        """Smallest odd grid on [-dmax, dmax] whose spacing does not exceed `spacing`"""
        if not spacing > 0:
            raise ValueError(f"spacing must be positive, got {spacing}")
        m = max(1, int(math.ceil(dmax / spacing - 1e-12)))
        return cls.symmetric(dmax, 2 * m + 1)

    @property
    def size(self) -> int:
        return int(self.deltas.shape[0])

    @property
    def spacing(self) -> float:
        return self.dmax / ((self.size - 1) // 2)

    @property
    def center(self) -> int:
        """Index of Δ = 0"""
        return (self.size - 1) // 2

    def widened(self, factor: int = 2) -> 'DetuningGrid':
        """Same spacing, dmax multiplied by an integer factor"""
        m = (self.size - 1) // 2
        return DetuningGrid.symmetric(self.dmax * factor, 2 * m * factor + 1)

    def refined(self, factor: int = 2) -> 'DetuningGrid':
        """Same dmax, spacing divided by an integer factor"""
        m = (self.size - 1) // 2
        return DetuningGrid.symmetric(self.dmax, 2 * m * factor + 1)

    def coarsened(self, factor: int) -> 'DetuningGrid':
        """Same dmax, spacing multiplied by (roughly) `factor`"""
        m = (self.size - 1) // 2
        return DetuningGrid.symmetric(self.dmax, 2 * max(1, m // factor) + 1)


@dataclass(frozen=True)
class BlochNode:
    """Bloch components (u, v, w) plus the field-convolution pair (c, s)"""
    u: float = 0.0
    v: float = 0.0
    w: float = -1.0
    c: float = 0.0
    s: float = 0.0

    @property
    def norm(self) -> float:
        return math.sqrt(self.u * self.u + self.v * self.v + self.w * self.w)


@dataclass(frozen=True)
class StepControl:
    """
    Step-size guard

    tau: sub-step duration (µs)
    pulse_bandwidth: Δp (rad/µs), 2π over the shortest envelope feature
    """
    tau: float
    pulse_bandwidth: float
    omega_max: Optional[float] = field(default=None)

    def problems(self, omega_max: Optional[float] = None) -> List[str]:
        found = []
        if not (self.tau > 0 and math.isfinite(self.tau)):
            found.append(f"step tau must be positive and finite, got {self.tau}")
            return found

        phase = self.pulse_bandwidth * self.tau
        if phase > MAX_BANDWIDTH_PHASE * (1 + BOUND_SLACK):
            found.append(
                f"Δp·τ = {phase:.6g} exceeds {MAX_BANDWIDTH_PHASE} "
                f"(Δp = {self.pulse_bandwidth:.6g} rad/µs, τ = {self.tau:.6g} µs)"
            )

        drive = omega_max if omega_max is not None else self.omega_max
        if drive is not None:
            angle = abs(drive) * self.tau
            if angle > MAX_DRIVE_ANGLE * (1 + BOUND_SLACK):
                found.append(
                    f"Ωmax·τ = {angle:.6g} rad exceeds {MAX_DRIVE_ANGLE} "
                    f"(Ωmax = {abs(drive):.6g} rad/µs, τ = {self.tau:.6g} µs)"
                )
        return found

    def validate(self, omega_max: Optional[float] = None):
        found = self.problems(omega_max)
        if found:
            logger.debug(f"[BLOCH] Step rejected (tau={self.tau:.6g} µs): {len(found)} bound(s) exceeded")
            raise StepControlError(found)


def _require_finite(**values):
    for name, value in values.items():
        if not math.isfinite(value):
            raise ValueError(f"{name} must be finite, got {value}")


def rotate_step(node: BlochNode, omega: float, delta: float, tau: float) -> BlochNode:
    """
    Rotate the Bloch vector exactly over one step of constant drive

    The rotation angle is sqrt(omega² + delta²)·tau about the axis
    (omega, 0, delta); c and s are left alone.
    """
    _require_finite(u=node.u, v=node.v, w=node.w, omega=omega, delta=delta, tau=tau)
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")

    u, v, w = kernels.rotate_components(node.u, node.v, node.w, omega, delta, tau)
    return BlochNode(u=u, v=v, w=w, c=node.c, s=node.s)


def convolution_step(c: float, s: float, omega: float, delta: float, tau: float) -> Tuple[float, float]:
    """
    Exact update of c = ∫Ω(t-τ')cos(Δτ')dτ' and s = ∫Ω(t-τ')sin(Δτ')dτ'

    Valid for a drive held constant over the step; |Δτ| < 1e-6 uses the
    analytic limit (increments → (Ωτ, 0)).
    """
    _require_finite(c=c, s=s, omega=omega, delta=delta, tau=tau)
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    return kernels.convolve_components(c, s, omega, delta, tau)


def apply_decay(node: BlochNode, tau: float, t2: float) -> BlochNode:
    """Transverse damping exp(-tau/t2) of u and v; (c, s) are left undamped. t2 = inf is the identity"""
    if math.isinf(t2) and t2 > 0:
        return node
    if not t2 > 0:
        raise ValueError(f"t2 must be positive or inf, got {t2}")
    factor = math.exp(-tau / t2)
    return BlochNode(u=node.u * factor, v=node.v * factor, w=node.w, c=node.c, s=node.s)


def renormalized_components(node: BlochNode) -> Tuple[float, float]:
    """(U, V) = (u + s, v - c), which vanish far from resonance"""
    return node.u + node.s, node.v - node.c


def step_node(node: BlochNode, omega: float, delta: float, tau: float, t2: float = math.inf) -> BlochNode:
    """One full node step: rotation, convolution tracking, then decay"""
    rotated = rotate_step(node, omega, delta, tau)
    c, s = convolution_step(node.c, node.s, omega, delta, tau)
    return apply_decay(BlochNode(rotated.u, rotated.v, rotated.w, c, s), tau, t2)
