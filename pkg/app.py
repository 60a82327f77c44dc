import argparse
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

from footprint_modules.analysis import extrapolate
from footprint_modules.errors import FootprintError, ValidationError
from footprint_modules.model import load_factors, load_machine
from footprint_modules.report_builder import (
    build_comparison,
    build_extrapolation,
    build_report,
    export_scorecard,
    load_report,
    utc_timestamp,
    write_document,
)
from footprint_modules.scenario.campaign_runner import CampaignRunner
from footprint_modules.scenario.scenario_parser import load_scenario

logger = logging.getLogger('footprint')

EXIT_IO = 3


def configure_logging(level: Optional[str] = None):
    level_name = (level or os.getenv('FOOTPRINT_LOG_LEVEL', 'INFO')).upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format='%(levelname)s - %(message)s',
        stream=sys.stderr,
        force=True,
    )


def cmd_run(args) -> int:
    """Run a campaign for one configuration and write its report"""
    spec = load_scenario(args.scenario)
    factors = load_factors(args.factors)
    machine = load_machine(args.machine)
    configuration = spec.configuration(args.config)

    campaign = CampaignRunner(spec).run_campaign(configuration, keep_going=args.keep_going)
    report = build_report(spec, campaign, factors, machine,
                          generated_at=None if args.no_timestamp else utc_timestamp())
    write_document(report, args.out)
    if args.xlsx:
        export_scorecard(report, args.xlsx)
    logger.info(f"Report for '{configuration.label}' written to {args.out}")
    return 0


def cmd_compare(args) -> int:
    """Compare two reports, B minus A"""
    left = load_report(args.report_a)
    right = load_report(args.report_b)
    document = build_comparison(left, right, alpha=args.alpha,
                                generated_at=None if args.no_timestamp else utc_timestamp())
    write_document(document, args.out)
    return 0


def cmd_extrapolate(args) -> int:
    result = extrapolate(args.per_kwh, args.per_kgco2e, args.daily_volume)
    write_document(build_extrapolation(result, generated_at=None if args.no_timestamp else utc_timestamp()),
                   args.out)
    return 0


class _ArgumentParser(argparse.ArgumentParser):
    """Usage errors are validation errors: exit 1, not argparse's 2"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(ValidationError.exit_code, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(description='Measure and compare the energy and carbon footprint of '
                                                 'scripted user interactions')
    parser.add_argument('--log-level', default=None, help='Overrides FOOTPRINT_LOG_LEVEL (default INFO)')
    subparsers = parser.add_subparsers(dest='command', required=True)

    run = subparsers.add_parser('run', help='Run a measurement campaign')
    run.add_argument('--scenario', required=True)
    run.add_argument('--factors', required=True)
    run.add_argument('--machine', required=True)
    run.add_argument('--config', required=True, help='Configuration label from the scenario file')
    run.add_argument('--out', required=True, help="Report file, or '-' for standard output")
    run.add_argument('--keep-going', action='store_true', help='Record failed runs and continue')
    run.add_argument('--no-timestamp', action='store_true', help='Omit generated_at for reproducible output')
    run.add_argument('--xlsx', default=None, help='Also write a spreadsheet scorecard')
    run.set_defaults(handler=cmd_run)

    compare = subparsers.add_parser('compare', help='Compare two reports (B - A)')
    compare.add_argument('report_a')
    compare.add_argument('report_b')
    compare.add_argument('--out', required=True)
    compare.add_argument('--alpha', type=float, default=None, help='Significance threshold for Welch p-values')
    compare.add_argument('--no-timestamp', action='store_true')
    compare.set_defaults(handler=cmd_compare)

    extrapolation = subparsers.add_parser('extrapolate', help='Scale a per-interaction footprint to a year')
    extrapolation.add_argument('--per-kwh', type=float, required=True)
    extrapolation.add_argument('--per-kgco2e', type=float, required=True)
    extrapolation.add_argument('--daily-volume', type=float, required=True)
    extrapolation.add_argument('--out', required=True)
    extrapolation.add_argument('--no-timestamp', action='store_true')
    extrapolation.set_defaults(handler=cmd_extrapolate)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)

    try:
        return args.handler(args)
    except FootprintError as e:
        logger.error(str(e))
        return e.exit_code
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_IO


if __name__ == '__main__':
    sys.exit(main())
