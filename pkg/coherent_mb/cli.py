"""
Command-line entry point

    coherent-mb <scenario> [--config FILE] [--out-dir DIR] [--area PI_UNITS]
                [--alphaL X] [--t2 US|inf] [--duration US] [--workers N]
                [--cache-url URL]

Exit codes: 0 pass, 1 completed check that failed, 2 invalid configuration,
3 numerical abort.
"""
import argparse
import logging
import sys
from typing import Dict, List, Optional

from dotenv import load_dotenv

from coherent_mb import __version__
from coherent_mb.config import SCENARIOS, ScenarioConfig, Settings, load_config, parse_config
from coherent_mb.database import DatabaseManager
from coherent_mb.errors import ConfigError, NumericalAbortError
from coherent_mb.scenarios import run_scenario

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

# CLI flag -> config key
FLAG_KEYS = {
    'out_dir': 'out_dir',
    'area': 'pulse.area_pi_units',
    'alphaL': 'alphaL',
    't2': 't2_us',
    'duration': 'pulse.duration_us',
    'workers': 'workers',
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='coherent-mb',
        description='Coherent pulse propagation through an inhomogeneously broadened absorber',
    )
    parser.add_argument('scenario', choices=SCENARIOS, help='Scenario to run')
    parser.add_argument('--config', type=str, help='Scenario file (key = value lines)')
    parser.add_argument('--out-dir', dest='out_dir', type=str,
                        help='Output directory (default: COHERENT_MB_OUT_DIR or results)')
    parser.add_argument('--area', type=str, help='Input pulse area in units of π')
    parser.add_argument('--alphaL', type=str, help='Opacity αL')
    parser.add_argument('--t2', type=str, help='Coherence lifetime in µs, or inf')
    parser.add_argument('--duration', type=str, help='Rectangular pulse duration in µs')
    parser.add_argument('--workers', type=str, help='Sweep worker threads (area-curve)')
    parser.add_argument('--cache-url', dest='cache_url', type=str,
                        help='Run cache database URL (default: COHERENT_MB_DATABASE_URL, unset = no cache)')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    return parser


def collect_overrides(args: argparse.Namespace) -> Dict[str, str]:
    overrides = {'scenario': args.scenario}
    for attr, key in FLAG_KEYS.items():
        value = getattr(args, attr)
        if value is not None:
            overrides[key] = value
    return overrides


def open_cache(url: Optional[str]) -> Optional[DatabaseManager]:
    """Run cache, or None when unset or unusable (runs continue uncached)"""
    if not url:
        return None
    try:
        db_manager = DatabaseManager(url)
        db_manager.init_db()
        return db_manager
    except Exception as e:
        logger.warning(f"[DB] Warning: could not initialize run cache: {str(e)}")
        logger.warning("[DB] Runs will continue without caching")
        return None


def execute(config: ScenarioConfig, settings: Settings, cache_url: Optional[str] = None) -> int:
    out_dir = config.out_dir or settings.out_dir
    workers = config.workers or settings.workers
    db_manager = open_cache(cache_url or settings.database_url)

    outcome = run_scenario(config, out_dir, workers=workers, db_manager=db_manager)

    print(f"\n[CLI] {outcome.scenario}: {'PASS' if outcome.passed else 'FAIL'}")
    for path in outcome.files:
        print(f"  -> {path}")
    return EXIT_PASS if outcome.passed else EXIT_CHECK_FAILED


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)

    try:
        settings = Settings.from_env()
    except ConfigError as e:
        logging.basicConfig(format='%(asctime)s %(levelname)s %(message)s')
        for problem in e.problems:
            logger.error(f"[CONFIG] {problem}")
        return EXIT_CONFIG

    logging.basicConfig(
        level=getattr(logging, settings.log_level),
        format='%(asctime)s %(levelname)s %(message)s',
    )

    try:
        overrides = collect_overrides(args)
        if args.config:
            config = load_config(args.config, overrides)
        else:
            config = parse_config('', overrides)
        return execute(config, settings, cache_url=args.cache_url)
    except ConfigError as e:
        print(f"\n[CLI] Invalid configuration ({len(e.problems)} problem(s)):", file=sys.stderr)
        for problem in e.problems:
            print(f"  - {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalAbortError as e:
        logger.error(f"[CLI] Numerical abort: {e} (step={e.step}, t={e.t_us} µs, slab={e.slab})")
        return EXIT_NUMERICAL


if __name__ == '__main__':
    sys.exit(main())
