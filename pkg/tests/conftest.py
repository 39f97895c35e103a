"""
Shared fixtures: small media and pulses that run in about a second
"""
import pytest

from coherent_mb.bloch import DetuningGrid
from coherent_mb.config import ScenarioConfig
from tests.helpers import small_rect


@pytest.fixture
def rect_pulse():
    return small_rect()


@pytest.fixture
def small_grid():
    return DetuningGrid.symmetric(5.0, 11)


@pytest.fixture
def small_config():
    """Scenario config for a short, thin medium"""
    return ScenarioConfig(alphaL=1.0, nz=21, duration_us=4.0, dt_us=0.005, window_us=16.0)


@pytest.fixture
def cache_url(tmp_path):
    return f"sqlite:///{tmp_path / 'cache.db'}"
