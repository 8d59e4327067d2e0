"""
reft-sim command line: simulate, analyze, recover-drill, codec.

Exit status 0 on success, 1 when a subcommand reports an error, 2 on invalid
configuration or usage.
"""

import argparse
import logging
import sys
from typing import List, Optional

from reft.config import LOG_LEVEL
from reft.errors import ConfigurationError
from tools.tool_loader import load_tools, tool_for_command
from utils.toon_formatter import ToonFormatter

logger = logging.getLogger(__name__)

LOG_FORMAT = '[%(asctime)s] [%(levelname)s] %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'


def configure_logging(level: str = LOG_LEVEL, log_file: Optional[str] = None) -> None:
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(getattr(logging, level.upper(), logging.INFO))
    console.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
    root.addHandler(console)
    root.setLevel(console.level)
    if log_file:
        file_handler = logging.FileHandler(log_file, mode='w')
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
        root.addHandler(file_handler)
        root.setLevel(logging.DEBUG)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help="experiment config file")
    common.add_argument('--set', dest='overrides', action='append', default=[], metavar='SECTION.KEY=VALUE',
                        help="override one config value (repeatable)")
    common.add_argument('--seed', type=int, help="seed for every random draw")
    common.add_argument('--out', help="output directory")
    common.add_argument('--log-level', default=LOG_LEVEL, help="console log level (default REFT_LOG_LEVEL or INFO)")
    common.add_argument('--log-file', help="also log at DEBUG to this file")

    parser = argparse.ArgumentParser(prog='reft-sim', description="In-memory fault-tolerance simulator")
    sub = parser.add_subparsers(dest='command', required=True)

    simulate = sub.add_parser('simulate', parents=[common], help="baseline vs snapshotting simulation")
    simulate.add_argument('--no-snapshot', action='store_true', help="disable snapshotting")
    simulate.add_argument('--iterations', type=int, help="number of training iterations")
    simulate.add_argument('--dump-config', action='store_true', help="write the effective config to --out")
    simulate.add_argument('--ledger', help="database URL of the run ledger (default REFT_LEDGER_URL)")

    analyze = sub.add_parser('analyze', parents=[common], help="survival curves and interval planning")
    analyze.add_argument('--fleet', '--fig8', dest='fleet', action='store_true',
                         help="3072 devices, 6-way groups, four Weibull shapes")
    analyze.add_argument('--threshold', type=float, default=0.9)
    analyze.add_argument('--t-max', type=float, default=30.0, help="curve horizon in days")
    analyze.add_argument('--points', type=int, default=301)
    analyze.add_argument('--literal', action='store_true',
                         help="charge software faults to the in-memory curve as well")
    analyze.add_argument('--t-sn', type=float, help="snapshot time, seconds")
    analyze.add_argument('--t-ckpt', type=float, help="checkpoint time, seconds")
    analyze.add_argument('--t-comp', type=float, help="forward + backward time, seconds")
    analyze.add_argument('--lambda-nd', type=float, dest='lambda_nd_fail',
                         help="node failure probability per interval")

    drill = sub.add_parser('recover-drill', parents=[common], help="kill nodes and verify recovery")
    drill.add_argument('--kill', action='append', default=[], help="node to fail, node3 or 3 (repeatable)")
    drill.add_argument('--strategy', default='arc', help="comma list of arc, arcK, aec, aor")
    drill.add_argument('--software', action='store_true', help="software failures (host memory survives)")
    drill.add_argument('--checkpoint', help="NFS checkpoint whose model shards seed the drill")
    drill.add_argument('--tmpfs', action='store_true', help="flush snapshots to tmpfs before the failure")
    drill.add_argument('--volatile-host', action='store_true',
                       help="software failures also erase host memory, leaving tmpfs as the local copy")
    drill.add_argument('--stage-bytes', type=int, default=4096)

    codec = sub.add_parser('codec', parents=[common], help="XOR parity over files")
    codec.add_argument('action', choices=['encode', 'decode'])
    codec.add_argument('inputs', nargs='+', help="input files; for decode the parity first")
    codec.add_argument('-o', '--output', help="output file")
    return parser


def _params(args: argparse.Namespace) -> dict:
    if args.command == 'simulate':
        return {'config': args.config, 'overrides': args.overrides, 'seed': args.seed, 'out': args.out,
                'iterations': args.iterations, 'no_snapshot': args.no_snapshot,
                'dump_config': args.dump_config, 'ledger': args.ledger}
    if args.command == 'analyze':
        return {'fleet': args.fleet, 'config': args.config, 'overrides': args.overrides, 'out': args.out,
                'threshold': args.threshold, 't_max': args.t_max, 'points': args.points, 'literal': args.literal,
                't_sn': args.t_sn, 't_ckpt': args.t_ckpt, 't_comp': args.t_comp,
                'lambda_nd_fail': args.lambda_nd_fail}
    if args.command == 'recover-drill':
        return {'kill': args.kill, 'strategy': args.strategy, 'software': args.software, 'config': args.config,
                'overrides': args.overrides, 'checkpoint': args.checkpoint, 'seed': args.seed, 'out': args.out,
                'tmpfs': args.tmpfs, 'volatile_host': args.volatile_host, 'stage_bytes': args.stage_bytes}
    return {'action': args.action, 'inputs': args.inputs, 'output': args.output}


def _print_result(command: str, result: dict, out: Optional[str]) -> None:
    if command == 'analyze':
        if out:
            print(result['table'])
        else:
            sys.stdout.write(result['curves_csv'])
        return
    print(result['message'])
    if command == 'simulate':
        print(result['table'])
    elif command == 'recover-drill':
        print(ToonFormatter.dumps(result['report']))


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level, args.log_file)

    tools, _ = load_tools()
    try:
        execute = tool_for_command(tools, args.command)
    except ConfigurationError as e:
        logger.error(str(e))
        return 1
    result = execute(_params(args))
    if result.get('status') != 'success':
        print(f"error: {result.get('message')}", file=sys.stderr)
        return 2 if result.get('error_type') == 'ConfigurationError' else 1
    _print_result(args.command, result, args.out)
    return 0


if __name__ == '__main__':
    sys.exit(main())
