"""
Exception hierarchy for coherent-mb

The CLI maps these onto exit codes (see cli.py).
"""
from typing import Iterable, List, Optional


class CoherentMBError(Exception):
    """Base class for every error raised on purpose by this package"""


class ConfigError(CoherentMBError):
    """Invalid configuration; carries every problem found, not just the first"""

    def __init__(self, problems: Iterable[str]):
        self.problems: List[str] = list(problems)
        super().__init__('; '.join(self.problems) if self.problems else 'invalid configuration')


class StepControlError(ConfigError):
    """Time step too coarse for the drive (Δp·τ or Ωmax·τ bound exceeded)"""


class NumericalAbortError(CoherentMBError):
    """Non-finite value detected while marching the field"""

    def __init__(self, message: str, step: Optional[int] = None,
                 t_us: Optional[float] = None, slab: Optional[int] = None):
        self.step = step
        self.t_us = t_us
        self.slab = slab
        super().__init__(message)


class AnalysisError(CoherentMBError, ValueError):
    """Metric undefined for the given envelopes (zero area, zero energy, finite T2 balance)"""
