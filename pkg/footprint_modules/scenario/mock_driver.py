"""Stand-in scenario driver for hermetic runs.

Executes any unit by sleeping through its steps (spread evenly over the target
duration) and reporting configurable traffic totals per configuration:

    python -m footprint_modules.scenario.mock_driver --default-bytes 1000:200 \\
        --bytes "Ad blocker=800:150"
"""
import argparse
import json
import os
import sys
import time
from typing import Dict, List, Optional, Tuple
from urllib.parse import quote, unquote


def _parse_pair(text: str) -> Tuple[int, int]:
    bytes_in, sep, bytes_out = text.partition(':')
    if not sep:
        raise argparse.ArgumentTypeError(f"expected IN:OUT, got {text!r}")
    try:
        return int(bytes_in), int(bytes_out)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integer IN:OUT, got {text!r}")


def _parse_label_bytes(text: str) -> Tuple[str, Tuple[int, int]]:
    label, sep, pair = text.rpartition('=')
    if not sep or not label:
        raise argparse.ArgumentTypeError(f"expected LABEL=IN:OUT, got {text!r}")
    return label, _parse_pair(pair)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Mock scenario driver')
    parser.add_argument('--bytes', dest='label_bytes', action='append', type=_parse_label_bytes, default=[],
                        metavar='LABEL=IN:OUT', help='Traffic totals reported for one configuration')
    parser.add_argument('--default-bytes', type=_parse_pair, default=None, metavar='IN:OUT',
                        help='Traffic totals for configurations without --bytes (default: no NET lines)')
    parser.add_argument('--fail-unit', default=None, help='Answer ERR when asked to run this unit')
    parser.add_argument('--fail-message', default='mock failure', help='Message sent with ERR')
    parser.add_argument('--malformed', action='store_true', help='Emit a STEP END without its START')
    parser.add_argument('--hang', action='store_true', help='Never finish the run')
    return parser


def _emit(line: str):
    sys.stdout.write(line + '\n')
    sys.stdout.flush()


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    totals: Dict[str, Tuple[int, int]] = dict(args.label_bytes)

    _emit('READY')
    command = sys.stdin.readline().split()
    if len(command) != 3 or command[0] != 'RUN':
        _emit('ERR expected RUN <unit> <config>')
        return 1
    unit, configuration = unquote(command[1]), unquote(command[2])

    steps = json.loads(os.getenv('FOOTPRINT_STEPS', '[]')) or [unit]
    target_ms = int(os.getenv('FOOTPRINT_TARGET_DURATION_MS', '1000'))

    if args.hang:
        time.sleep(3600)
        return 0
    if unit == args.fail_unit:
        _emit(f'ERR {args.fail_message}')
        return 0
    if args.malformed:
        _emit(f'STEP {quote(steps[0], safe="")} END 0')
        _emit('DONE 0')
        return 0

    bytes_in, bytes_out = totals.get(configuration, args.default_bytes or (0, 0))
    report_net = configuration in totals or args.default_bytes is not None
    n = len(steps)
    # Nominal step boundaries; the sleeps make wall time match them
    for index, step in enumerate(steps):
        start = index * target_ms // n
        end = (index + 1) * target_ms // n
        name = quote(step, safe='')
        _emit(f'STEP {name} START {start}')
        time.sleep((end - start) / 1000.0)
        _emit(f'STEP {name} END {end}')
        if report_net:
            _emit(f'NET {bytes_in * (index + 1) // n} {bytes_out * (index + 1) // n}')
    _emit('DONE 0')
    return 0


if __name__ == '__main__':
    sys.exit(main())
