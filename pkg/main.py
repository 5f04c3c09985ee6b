# main.py
import argparse
import sys
from typing import List, Optional

from runner.runner import ScenarioRunner
from runner.scenario import ScenarioCatalog
from utils.config import Config
from utils.errors import ScenarioError
from utils.logger import logger

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INVALID = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kinetic-uq",
                                     description="Uncertainty quantification for kinetic Fokker-Planck models")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run a scenario and write its CSV tables and manifest")
    run.add_argument("--config", required=True, help="Scenario file or bundled scenario id")
    run.add_argument("--seed", type=int, help="Override the scenario seed")
    run.add_argument("--threads", type=int, help="Worker threads (default: KINETIC_UQ_THREADS, then cpu count)")
    run.add_argument("--out", help="Output directory (default: the scenario's [output] directory)")

    commands.add_parser("list", help="List the bundled scenarios")

    validate = commands.add_parser("validate", help="Check a scenario without running it")
    validate.add_argument("--config", required=True, help="Scenario file or bundled scenario id")
    return parser


def run_scenario(config: str, seed: Optional[int] = None, threads: Optional[int] = None,
                 out: Optional[str] = None) -> int:
    """
    Load, run and export one scenario.

    Returns:
        int: 0 on success, 1 on a solver failure, 2 on an invalid scenario
    """
    try:
        scenario = ScenarioCatalog().load(config, seed)
    except ScenarioError as e:
        logger.error(f"Invalid scenario: {e.render()}")
        return EXIT_INVALID

    if threads is not None and threads < 1:
        logger.error("--threads must be at least 1")
        return EXIT_INVALID

    runner = ScenarioRunner(scenario, threads, out)
    try:
        logger.info(f"Starting scenario {scenario.id}...")
        runner.start()
        result = runner.run()
    except KeyboardInterrupt:
        logger.info("Run stopped by user")
        return EXIT_FAILED
    finally:
        runner.stop()

    if not result['success']:
        logger.error(result['message'])
        return EXIT_FAILED
    logger.info(f"{result['message']}: {len(result['artifacts'])} files in {runner.output_dir}")
    return EXIT_OK


def list_scenarios() -> int:
    for scenario_id, description in ScenarioCatalog().describe():
        print(f"{scenario_id:<16} {description}")
    return EXIT_OK


def validate_scenario(config: str) -> int:
    try:
        scenario = ScenarioCatalog().load(config)
    except ScenarioError as e:
        print(e.render())
        return EXIT_INVALID
    print(f"{scenario.id}: ok ({', '.join(scenario.methods)}; {scenario.grid.n_cells} cells, "
          f"dt {scenario.dt:.6g} from '{scenario.dt_rule.text}')")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    # Validate configuration
    config_errors = Config.validate()
    if config_errors:
        logger.error("Configuration errors detected:")
        for key, error in config_errors.items():
            logger.error(f"  - {key}: {error}")
        logger.error("Please check your .env file and restart the application.")
        return EXIT_FAILED

    try:
        if args.command == "list":
            return list_scenarios()
        if args.command == "validate":
            return validate_scenario(args.config)
        return run_scenario(args.config, args.seed, args.threads, args.out)
    except Exception as error:
        logger.error(f'Error in main function: {error}')
        raise error


if __name__ == "__main__":
    sys.exit(main())
