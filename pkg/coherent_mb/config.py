"""
Scenario configuration and process settings

Scenario files are flat `key = value` documents with `#` comments, read with
python-dotenv's stream parser. Process settings come from the environment
(COHERENT_MB_* variables, optionally loaded from a .env file).
"""
import io
import logging
import math
import os
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Mapping, NamedTuple, Optional

from dotenv.parser import parse_stream

from coherent_mb.bloch import DetuningGrid, StepControl
from coherent_mb.engine import MediumConfig, default_grid, default_nz
from coherent_mb.errors import ConfigError
from coherent_mb.pulses import (
    RECT_WINDOW_FACTOR, SECH_WINDOW_FACTOR, PulseEnvelope, default_dt, pulse_bandwidth,
    rectangular_pulse, rectangular_scales, sech_pulse, sech_scales,
)

logger = logging.getLogger(__name__)

SCENARIOS = ('propagate', 'area-curve', 'soliton-check', 'convergence-check')
SHAPES = ('rect', 'sech')


def _parse_float(text: str) -> float:
    value = float(text)
    if math.isnan(value):
        raise ValueError("NaN is not allowed")
    return value


def _parse_int(text: str) -> int:
    return int(text)


def _format_float(value: float) -> str:
    return 'inf' if math.isinf(value) and value > 0 else repr(float(value))


@dataclass(frozen=True)
class ScenarioConfig:
    """Fully defaulted scenario; None on grid fields means derived automatically"""
    scenario: str = 'propagate'
    alphaL: float = 5.0
    t2_us: float = math.inf
    out_dir: Optional[str] = None
    workers: Optional[int] = None
    pulse_shape: str = 'rect'
    area_pi_units: float = 1.0
    duration_us: float = 7.0
    tau_s_us: float = 1.0
    span: float = 10.0
    nz: Optional[int] = None
    n_omega: Optional[int] = None
    dmax: Optional[float] = None
    dt_us: Optional[float] = None
    window_us: Optional[float] = None
    sweep_start_pi: float = 0.1
    sweep_stop_pi: float = 3.9
    sweep_step_pi: float = 0.1
    tolerance: float = 0.005

    def sweep_areas(self) -> List[float]:
        """Swept input areas in units of π, rounded to the step's decimals"""
        count = int(math.floor((self.sweep_stop_pi - self.sweep_start_pi) / self.sweep_step_pi + 1e-9)) + 1
        return [round(self.sweep_start_pi + i * self.sweep_step_pi, 10) for i in range(count)]


class KeySpec(NamedTuple):
    attr: str
    parse: Callable[[str], object]
    format: Callable[[object], str]


KEYS: Dict[str, KeySpec] = {
    'scenario': KeySpec('scenario', str, str),
    'alphaL': KeySpec('alphaL', _parse_float, _format_float),
    't2_us': KeySpec('t2_us', _parse_float, _format_float),
    'out_dir': KeySpec('out_dir', str, str),
    'workers': KeySpec('workers', _parse_int, str),
    'pulse.shape': KeySpec('pulse_shape', str, str),
    'pulse.area_pi_units': KeySpec('area_pi_units', _parse_float, _format_float),
    'pulse.duration_us': KeySpec('duration_us', _parse_float, _format_float),
    'pulse.tau_s_us': KeySpec('tau_s_us', _parse_float, _format_float),
    'pulse.span': KeySpec('span', _parse_float, _format_float),
    'grid.nz': KeySpec('nz', _parse_int, str),
    'grid.n_omega': KeySpec('n_omega', _parse_int, str),
    'grid.dmax': KeySpec('dmax', _parse_float, _format_float),
    'grid.dt_us': KeySpec('dt_us', _parse_float, _format_float),
    'grid.window_us': KeySpec('window_us', _parse_float, _format_float),
    'sweep.start_pi': KeySpec('sweep_start_pi', _parse_float, _format_float),
    'sweep.stop_pi': KeySpec('sweep_stop_pi', _parse_float, _format_float),
    'sweep.step_pi': KeySpec('sweep_step_pi', _parse_float, _format_float),
    'check.tolerance': KeySpec('tolerance', _parse_float, _format_float),
}


class RunPlan(NamedTuple):
    pulse: PulseEnvelope
    medium: MediumConfig


def pulse_scales(config: ScenarioConfig, area: float):
    """(Δp, Ωmax) of the configured shape at `area` rad"""
    if config.pulse_shape == 'sech':
        return sech_scales(area, config.tau_s_us)
    return rectangular_scales(area, config.duration_us)


def build_pulse(config: ScenarioConfig, area_pi: Optional[float] = None,
                shape: Optional[str] = None) -> PulseEnvelope:
    """Input envelope for `area_pi` (default: the configured area)"""
    if shape is not None and shape != config.pulse_shape:
        config = replace(config, pulse_shape=shape)
    area = math.pi * (config.area_pi_units if area_pi is None else area_pi)
    bandwidth, omega_max = pulse_scales(config, area)
    dt = config.dt_us if config.dt_us is not None else default_dt(bandwidth, omega_max)

    if config.pulse_shape == 'sech':
        window = config.window_us or SECH_WINDOW_FACTOR * 2.0 * config.span * config.tau_s_us
        center = config.span * config.tau_s_us
        return sech_pulse(config.tau_s_us, t0=center, dt=dt, span=config.span, area=area, window=window)

    window = config.window_us or RECT_WINDOW_FACTOR * config.duration_us
    return rectangular_pulse(area, config.duration_us, t0=0.0, dt=dt, window=window)


def build_medium(config: ScenarioConfig, pulse: PulseEnvelope, area_pi: Optional[float] = None) -> MediumConfig:
    area = math.pi * (config.area_pi_units if area_pi is None else area_pi)
    bandwidth, omega_max = pulse_scales(config, area)
    if config.dmax is None and config.n_omega is None:
        grid = default_grid(bandwidth, omega_max, pulse.window)
    else:
        auto = default_grid(bandwidth, omega_max, pulse.window)
        dmax = config.dmax if config.dmax is not None else auto.dmax
        if config.n_omega is not None:
            grid = DetuningGrid.symmetric(dmax, config.n_omega)
        else:
            grid = DetuningGrid.from_spacing(dmax, math.pi / (4.0 * pulse.window))
    nz = config.nz if config.nz is not None else default_nz(config.alphaL)
    return MediumConfig(alphaL=config.alphaL, nz=nz, t2=config.t2_us, grid=grid)


def build_plan(config: ScenarioConfig, area_pi: Optional[float] = None,
               shape: Optional[str] = None) -> RunPlan:
    if shape is not None and shape != config.pulse_shape:
        config = replace(config, pulse_shape=shape)
    pulse = build_pulse(config, area_pi)
    return RunPlan(pulse=pulse, medium=build_medium(config, pulse, area_pi))


def _field_problems(config: ScenarioConfig) -> List[str]:
    found = []
    if config.scenario not in SCENARIOS:
        found.append(f"scenario must be one of {', '.join(SCENARIOS)}, got '{config.scenario}'")
    if config.pulse_shape not in SHAPES:
        found.append(f"pulse.shape must be one of {', '.join(SHAPES)}, got '{config.pulse_shape}'")
    if not (config.alphaL > 0 and math.isfinite(config.alphaL)):
        found.append(f"alphaL must be > 0, got {config.alphaL}")
    if not config.t2_us > 0:
        found.append(f"t2_us must be > 0 or inf, got {config.t2_us}")
    if not math.isfinite(config.area_pi_units):
        found.append(f"pulse.area_pi_units must be finite, got {config.area_pi_units}")
    if config.scenario == 'propagate' and config.area_pi_units == 0.0:
        found.append("pulse.area_pi_units = 0: a zero-area pulse has nothing to propagate")
    if not (config.duration_us > 0 and math.isfinite(config.duration_us)):
        found.append(f"pulse.duration_us must be > 0, got {config.duration_us}")
    if not (config.tau_s_us > 0 and math.isfinite(config.tau_s_us)):
        found.append(f"pulse.tau_s_us must be > 0, got {config.tau_s_us}")
    if not config.span >= 10.0:
        found.append(f"pulse.span must be >= 10, got {config.span}")
    if config.workers is not None and config.workers < 1:
        found.append(f"workers must be >= 1, got {config.workers}")
    if config.nz is not None:
        if config.nz < 2:
            found.append(f"grid.nz must be >= 2, got {config.nz}")
        elif config.alphaL > 0 and config.alphaL / (config.nz - 1) > 0.1 * (1 + 1e-9):
            found.append(
                f"grid.nz = {config.nz} gives slab spacing {config.alphaL / (config.nz - 1):.4g} > 0.1 "
                f"(need nz >= {default_nz(config.alphaL, 0.1)})"
            )
    if config.n_omega is not None and (config.n_omega < 3 or config.n_omega % 2 == 0):
        found.append(f"grid.n_omega must be odd and >= 3, got {config.n_omega}")
    for key, value in (('grid.dmax', config.dmax), ('grid.dt_us', config.dt_us),
                       ('grid.window_us', config.window_us)):
        if value is not None and not (value > 0 and math.isfinite(value)):
            found.append(f"{key} must be > 0, got {value}")
    if not config.sweep_start_pi > 0:
        found.append(f"sweep.start_pi must be > 0, got {config.sweep_start_pi}")
    if not config.sweep_step_pi > 0:
        found.append(f"sweep.step_pi must be > 0, got {config.sweep_step_pi}")
    if not config.sweep_stop_pi >= config.sweep_start_pi:
        found.append(f"sweep.stop_pi ({config.sweep_stop_pi}) must be >= sweep.start_pi ({config.sweep_start_pi})")
    if not config.tolerance > 0:
        found.append(f"check.tolerance must be > 0, got {config.tolerance}")
    return found


def _plan_problems(config: ScenarioConfig) -> List[str]:
    """Build the largest-drive run of the scenario and apply StepControl to it"""
    if config.scenario == 'area-curve':
        area_pi, shape = config.sweep_areas()[-1], None
    elif config.scenario == 'soliton-check':
        area_pi, shape = 2.0, 'sech'
    else:
        area_pi, shape = config.area_pi_units, None

    try:
        plan = build_plan(config, area_pi, shape=shape)
        if plan.pulse.peak > 0.0:
            control = StepControl(tau=plan.pulse.dt, pulse_bandwidth=pulse_bandwidth(plan.pulse))
            return control.problems(omega_max=plan.pulse.peak)
    except ConfigError as e:
        return list(e.problems)
    except ValueError as e:
        return [str(e)]
    return []


def validate(config: ScenarioConfig) -> ScenarioConfig:
    """
    Check every invariant and raise a single ConfigError listing all problems
    """
    problems = _field_problems(config)
    if not problems:
        problems = _plan_problems(config)
    if problems:
        raise ConfigError(problems)
    return config


def _binding_line(binding) -> int:
    """Line of the binding itself; the parser reports where its leading blank lines start"""
    original = binding.original.string
    lead = original[:len(original) - len(original.lstrip())]
    return binding.original.line + lead.count('\n')


def parse_config(text: str, overrides: Optional[Mapping[str, str]] = None) -> ScenarioConfig:
    """
    Parse a scenario document into a validated ScenarioConfig

    Args:
        text: `key = value` lines; blank lines and `#` comments are ignored
        overrides: raw string values (CLI flags) replacing document keys

    Raises:
        ConfigError: with one message per bad line, unknown or duplicate key,
            unparsable value, or violated invariant
    """
    problems: List[str] = []
    raw: Dict[str, str] = {}
    seen_line: Dict[str, int] = {}

    for binding in parse_stream(io.StringIO(text)):
        line = _binding_line(binding)
        if binding.error:
            problems.append(f"line {line}: cannot parse '{binding.original.string.strip()}'")
            continue
        if binding.key is None:
            continue
        key = binding.key
        if key not in KEYS:
            problems.append(f"line {line}: unknown key '{key}'")
            continue
        if key in seen_line:
            problems.append(f"line {line}: duplicate key '{key}' (first set on line {seen_line[key]})")
            continue
        if binding.value is None:
            problems.append(f"line {line}: key '{key}' has no value")
            continue
        seen_line[key] = line
        raw[key] = binding.value.strip()

    for key, value in (overrides or {}).items():
        if key not in KEYS:
            problems.append(f"override: unknown key '{key}'")
            continue
        raw[key] = str(value)

    values = {}
    for key, text_value in raw.items():
        entry = KEYS[key]
        where = f"line {seen_line[key]}" if key in seen_line and key not in (overrides or {}) else "override"
        try:
            values[entry.attr] = entry.parse(text_value)
        except ValueError:
            problems.append(f"{where}: invalid value '{text_value}' for key '{key}'")

    if problems:
        raise ConfigError(problems)

    config = validate(ScenarioConfig(**values))
    logger.debug(f"[CONFIG] Parsed {len(raw)} keys: {config}")
    return config


def serialize(config: ScenarioConfig) -> str:
    """Canonical document for `config`; unset (None) fields are omitted"""
    lines = []
    for key, entry in KEYS.items():
        value = getattr(config, entry.attr)
        if value is None:
            continue
        lines.append(f"{key} = {entry.format(value)}")
    return '\n'.join(lines) + '\n'


def load_config(path: str, overrides: Optional[Mapping[str, str]] = None) -> ScenarioConfig:
    try:
        with open(path, encoding='utf-8') as f:
            text = f.read()
    except OSError as e:
        raise ConfigError([f"cannot read config file {path}: {e.strerror}"])
    return parse_config(text, overrides)


@dataclass(frozen=True)
class Settings:
    """Process-level settings from COHERENT_MB_* environment variables"""
    out_dir: str = 'results'
    workers: int = 1
    database_url: Optional[str] = None
    log_level: str = 'INFO'

    @classmethod
    def from_env(cls, environ: Optional[Mapping[str, str]] = None) -> 'Settings':
        env = os.environ if environ is None else environ
        problems = []
        workers = 1
        raw_workers = env.get('COHERENT_MB_WORKERS', '1')
        try:
            workers = int(raw_workers)
            if workers < 1:
                raise ValueError
        except ValueError:
            problems.append(f"COHERENT_MB_WORKERS must be a positive integer, got '{raw_workers}'")

        log_level = env.get('COHERENT_MB_LOG_LEVEL', 'INFO').upper()
        if log_level not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            problems.append(f"COHERENT_MB_LOG_LEVEL must be a logging level name, got '{log_level}'")
        if problems:
            raise ConfigError(problems)

        return cls(
            out_dir=env.get('COHERENT_MB_OUT_DIR') or 'results',
            workers=workers,
            database_url=env.get('COHERENT_MB_DATABASE_URL') or None,
            log_level=log_level,
        )
