# ===== apps/harness/cli.py =====
import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import CommandError
from rest_framework.exceptions import ValidationError

from .exceptions import ScenarioNotFound
from .scenarios import ScenarioConfig, load_scenario

logger = logging.getLogger(__name__)


def add_scenario_arguments(parser):
    parser.add_argument('scenario', help='Scenario name in the scenario directory, or a path to a YAML file')
    parser.add_argument('--seed', type=int, default=None, help='First seed (defaults to the scenario seed)')
    parser.add_argument('--seeds', type=int, default=1, help='Number of consecutive seeds to run')
    parser.add_argument('--iterations', type=int, default=None)
    parser.add_argument('--churn', type=float, default=None)
    parser.add_argument('--out', default=None, help='Output directory (defaults to GWTF_OUTPUT_DIR)')
    parser.add_argument('--scenario-dir', default=None)


def load_config(options, **overrides) -> ScenarioConfig:
    """Scenario file plus CLI overrides; validation problems become CommandError"""
    try:
        return load_scenario(
            options['scenario'],
            options.get('scenario_dir'),
            iterations=options.get('iterations'),
            churn=options.get('churn'),
            **overrides,
        )
    except ScenarioNotFound as exc:
        raise CommandError(str(exc))
    except ValidationError as exc:
        raise CommandError(f"Invalid scenario '{options['scenario']}': {exc.detail}")


def seeds_for(config: ScenarioConfig, options) -> list:
    first = options['seed'] if options.get('seed') is not None else config.seed
    return list(range(first, first + max(1, options.get('seeds') or 1)))


def output_dir(options) -> Path:
    path = Path(options.get('out') or settings.GWTF_OUTPUT_DIR)
    path.mkdir(parents=True, exist_ok=True)
    return path
