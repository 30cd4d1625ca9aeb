import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from pydantic import ValidationError

from solitonforge.config import COMMANDS, ExperimentConfig
from solitonforge.exceptions import DomainError, SolitonError
from solitonforge.experiment_runner import emit, run

logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="solitonforge",
        description="Numerical lab for steady Kahler-Ricci solitons glued from Cao's soliton and a Calabi bubble.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat JSON object of ExperimentConfig keys; flags override it")
    parser.add_argument("--n", type=int)
    parser.add_argument("--a", type=float)
    parser.add_argument("--eps", type=float)
    parser.add_argument("--eps-list", dest="eps_list", type=float, nargs="+")
    parser.add_argument("--gamma", type=float)
    parser.add_argument("--delta", type=float)
    parser.add_argument("--h", type=float)
    parser.add_argument("--t-min", dest="t_min", type=float)
    parser.add_argument("--t-max", dest="t_max", type=float)
    parser.add_argument("--t-far", dest="t_far", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out")
    parser.add_argument("--jobs", type=int)
    parser.add_argument("--probes", type=int)
    parser.add_argument("--samples", type=int)
    parser.add_argument("--starts", type=int)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {key: value for key, value in vars(args).items() if key != "config"}
    try:
        config = ExperimentConfig.from_sources(args.config, overrides)
    except (ValidationError, DomainError) as e:
        logger.error(f"Configuration Error: {str(e)}")
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"Cannot read config file {args.config}: {str(e)}")
        return EXIT_CONFIG

    record = run(config)
    try:
        emit(record, config.out)
    except SolitonError as e:
        logger.error(f"Output Error: {str(e)}")
        return EXIT_NUMERICAL

    if record.failed or not record.passed:
        return EXIT_NUMERICAL
    logger.info(f"{config.command} completed successfully")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
