import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import coloredlogs

from config.settings import LOG_FILE, LOG_FORMAT, LOG_LEVEL, OUTPUT_DIR
from src.market_clearing import MarketClearingError
from src.simulation_runner import (
    RunManifest,
    SuiteError,
    load_scenario,
    normalize_case,
    run_kmax_sweep,
    run_suite,
)
from src.strategic_bidding import brute_force_bilevel
from src.utils.data_parser import ScenarioParser

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_SOLVE = 2
EXIT_IO = 3


def setup_logging(level: str = LOG_LEVEL, log_file: str = LOG_FILE) -> None:
    """
    Logs to a file and to a colored console.
    Args:
        level: Logging level name.
        log_file: Log file path; its directory is created if needed.
    """
    Path(log_file).parent.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(level=level,
                        format=LOG_FORMAT,
                        handlers=[
                            logging.FileHandler(log_file, encoding='utf-8'),
                        ])
    coloredlogs.install(level=level, fmt=LOG_FORMAT)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='market-sim',
        description='Market clearing, strategic bidding and reserve analysis.',
    )
    parser.add_argument('--log-level', default=LOG_LEVEL, help='Logging level (default: %(default)s).')
    parser.add_argument('--log-file', default=LOG_FILE, help='Log file (default: %(default)s).')
    commands = parser.add_subparsers(dest='command', required=True)

    simulate = commands.add_parser('simulate', help='Run a manifest suite or single cases.')
    simulate.add_argument('--manifest', help='Run manifest (JSON).')
    simulate.add_argument('--scenario', help="Scenario JSON file, or 'table1' for the bundled case.")
    simulate.add_argument('--case', action='append', default=[],
                          help="Case to run: 'pcm' or 'icm:<company id>'. Repeatable.")
    simulate.add_argument('--out', help=f'Output directory (default: {OUTPUT_DIR}).')
    simulate.add_argument('--workers', type=int, default=1, help='Parallel case processes.')
    simulate.add_argument('--seed', type=int, help='Seed for the bidding search restarts.')
    simulate.add_argument('--no-figures', action='store_true', help='Skip the PNG figures.')

    validate = commands.add_parser('validate', help='Check a scenario file.')
    validate.add_argument('--scenario', required=True, help="Scenario JSON file, or 'table1'.")
    validate.add_argument('--export', help='Write the validated scenario as JSON to this file.')

    oracle = commands.add_parser('oracle', help='Exhaustive bid-grid search for small horizons.')
    oracle.add_argument('--scenario', required=True, help="Scenario JSON file, or 'table1'.")
    oracle.add_argument('--grid-step', type=float, required=True, help='Grid spacing for every k_t.')
    oracle.add_argument('--company', help='Strategic company (default: the scenario setting).')
    oracle.add_argument('--out', help='Write the result as JSON to this file.')

    sweep = commands.add_parser('sweep', help="Re-solve one company's strategic case over several k_max values.")
    sweep.add_argument('--scenario', required=True, help="Scenario JSON file, or 'table1'.")
    sweep.add_argument('--company', required=True, help='Strategic company.')
    sweep.add_argument('--k-max', type=float, nargs='+', required=True, help='Bid caps to try.')
    sweep.add_argument('--out', default=OUTPUT_DIR, help='Output directory (default: %(default)s).')
    return parser


def simulate(args: argparse.Namespace) -> None:
    if args.manifest:
        if args.scenario or args.case:
            raise ValueError("Use either --manifest or --scenario/--case, not both.")
        manifest = RunManifest.load(args.manifest)
    else:
        if not args.scenario or not args.case:
            raise ValueError("simulate needs --manifest, or --scenario with at least one --case.")
        document = {
            'scenario': args.scenario,
            'cases': [normalize_case(case) for case in args.case],
            'output_dir': args.out or OUTPUT_DIR,
            'workers': args.workers,
            'figures': not args.no_figures,
        }
        if args.seed is not None:
            document['seed'] = args.seed
        manifest = RunManifest.from_dict(document)
    result = run_suite(manifest)
    for report in result.reports:
        logging.info(f"{report.label}: energy fee {report.energy_fee:.3f} k¥, mean Lerner {report.lerner_mean:.4f}")


def validate(args: argparse.Namespace) -> None:
    scenario = load_scenario(args.scenario)
    logging.info(
        f"Scenario is valid: {len(scenario.companies)} companies, horizon {scenario.horizon}, "
        f"k_max {scenario.k_max}, strategic company {scenario.strategic_company}"
    )
    if args.export:
        ScenarioParser().save(scenario, args.export)


def oracle(args: argparse.Namespace) -> None:
    scenario = load_scenario(args.scenario)
    if args.company:
        scenario = scenario.with_strategic(args.company)
    if scenario.strategic_company is None:
        raise ValueError("The oracle needs a strategic company (scenario setting or --company).")
    if scenario.strategic_company not in scenario.company_ids:
        raise ValueError(f"Unknown company '{scenario.strategic_company}'.")
    solution = brute_force_bilevel(scenario, args.grid_step)
    result = {
        'strategic_company': scenario.strategic_company,
        'grid_step': args.grid_step,
        'bids': list(solution.bids.k),
        'strategic_profit': solution.strategic_profit,
        'prices': [float(p) for p in solution.dispatch.prices],
        'evaluations': solution.solve_stats['evaluations'],
    }
    logging.info(f"Oracle result: {json.dumps(result)}")
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(result, indent=2) + "\n", encoding='utf-8')


def sweep(args: argparse.Namespace) -> None:
    scenario = load_scenario(args.scenario)
    frame = run_kmax_sweep(scenario, args.company, args.k_max, args.out)
    logging.info(f"k_max sweep for {args.company}:\n{frame.to_string()}")


COMMANDS = {
    'simulate': simulate,
    'validate': validate,
    'oracle': oracle,
    'sweep': sweep,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Command-line entry point.
    Returns:
        0 on success, 1 for invalid input, 2 for a failed solve, 3 for I/O errors.
    """
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level, args.log_file)
    try:
        COMMANDS[args.command](args)
    except ValueError as e:
        logging.error(f"Invalid input: {e}")
        return EXIT_VALIDATION
    except (MarketClearingError, SuiteError) as e:
        logging.error(f"Solve failed: {e}")
        return EXIT_SOLVE
    except OSError as e:
        logging.error(f"I/O error: {e}")
        return EXIT_IO
    except Exception as e:
        logging.critical(f"Unexpected error: {e}", exc_info=True)
        return EXIT_SOLVE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
