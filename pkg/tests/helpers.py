import math

from coherent_mb.engine import MediumConfig, grid_for_pulse
from coherent_mb.pulses import rectangular_pulse


def small_rect(area_pi=1.0, duration=4.0, dt=0.005, window=16.0):
    return rectangular_pulse(area_pi * math.pi, duration, t0=0.0, dt=dt, window=window)


def small_medium(pulse, alphaL=1.0, nz=21, t2=math.inf, grid=None):
    return MediumConfig(alphaL=alphaL, nz=nz, t2=t2, grid=grid or grid_for_pulse(pulse))
