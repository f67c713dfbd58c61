"""The ``evorl`` command.

::

    evorl run [--config FILE] [--preset NAME] [--env E --mode M --algo A --fraction F
              --seed S --trials T --budget B --out DIR] [--require-solved] [-v]
    evorl report DIR [DIR ...] [--csv FILE]
    evorl show-mask --env E --fraction F [--seed S]

Exit status: 0 on success, 1 on configuration (or argument) errors, 2 on runtime
faults (including file system errors), 3 when ``--require-solved`` was given and the
median trial didn't solve the env.
"""

import sys
import logging
import argparse
from typing import Optional, Sequence

from evorl.constants import env_names, modes, DFLT_CELL_TEMPLATE
from evorl.harness import (
    load_run_config,
    run_suite,
    report,
    instinct_ratio_correlations,
)
from evorl.masking import grid_for, build_mask
from evorl.util import EvoRLError, InvalidArgument, json_dumps

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG_ERROR, EXIT_RUNTIME_FAULT, EXIT_UNSOLVED = 0, 1, 2, 3


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors are configuration errors: they exit with ``EXIT_CONFIG_ERROR``"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG_ERROR, f'{self.prog}: error: {message}\n')


def _run(args) -> int:
    overrides = {
        'env': args.env,
        'mode': args.mode,
        'algo': args.algo,
        'fraction': args.fraction,
        'seed': args.seed,
        'trials': args.trials,
        'budget': args.budget,
        'out': args.out,
        'workers': args.workers,
        'parallel_trials': args.parallel_trials,
    }
    if args.allow_any_fraction:
        overrides['allow_any_fraction'] = True
    if args.population_stddev:
        overrides['population_stddev'] = True
    cfg = load_run_config(args.config, preset=args.preset, overrides=overrides)
    summary = run_suite(cfg)
    print(f'{cfg.label}\t{cfg.env}\t{cfg.fraction:.0%}\t{summary.cell()}')
    if args.require_solved and summary.median_solved_at is None:
        logger.warning(f'{cfg.env} was not solved by the median trial')
        return EXIT_UNSOLVED
    return EXIT_OK


def _report(args) -> int:
    table = report(args.dirs, template=args.template)
    print(table.to_string())
    correlations = instinct_ratio_correlations(args.dirs)
    if len(correlations):
        print()
        print(correlations.to_string(index=False))
    if args.csv:
        table.to_csv(args.csv)
    return EXIT_OK


def _show_mask(args) -> int:
    grid = grid_for(args.env)
    mask = build_mask(grid, args.fraction, args.seed)
    sys.stdout.write(json_dumps(mask.to_jdict(args.env, grid)))
    return EXIT_OK


def make_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog='evorl',
        description='Evolve behavior-tree instincts for learners, in environments '
        'with rewardless states.',
    )
    parser.add_argument(
        '-v', '--verbose', action='count', default=0, help='-v: info, -vv: debug'
    )
    sub = parser.add_subparsers(
        dest='command', required=True, parser_class=ArgumentParser
    )

    run_p = sub.add_parser('run', help='Run a suite of trials')
    run_p.add_argument('--config', help='json config file')
    run_p.add_argument('--preset', help='named preset (full, desk, smoke...)')
    run_p.add_argument('--env', choices=env_names)
    run_p.add_argument('--mode', choices=modes)
    run_p.add_argument('--algo', help='q or dqn')
    run_p.add_argument('--fraction', type=float, help='fraction of rewardless bins')
    run_p.add_argument('--seed', type=int, help='master seed')
    run_p.add_argument('--trials', type=int)
    run_p.add_argument('--budget', type=int)
    run_p.add_argument('--out', help='output directory of the suite')
    run_p.add_argument('--workers', type=int, help='processes per generation')
    run_p.add_argument('--parallel-trials', type=int, help='trials run concurrently')
    run_p.add_argument('--allow-any-fraction', action='store_true')
    run_p.add_argument('--population-stddev', action='store_true')
    run_p.add_argument(
        '--require-solved',
        action='store_true',
        help=f'exit with status {EXIT_UNSOLVED} if the median trial is unsolved',
    )
    run_p.set_defaults(func=_run)

    report_p = sub.add_parser('report', help='Aggregate suites in a comparison table')
    report_p.add_argument('dirs', nargs='+', help='suite directories')
    report_p.add_argument('--csv', help='also write the table to this csv file')
    report_p.add_argument('--template', default=DFLT_CELL_TEMPLATE)
    report_p.set_defaults(func=_report)

    mask_p = sub.add_parser('show-mask', help='Print the json of a rewardless mask')
    mask_p.add_argument('--env', choices=env_names, required=True)
    mask_p.add_argument('--fraction', type=float, required=True)
    mask_p.add_argument('--seed', type=int, default=0)
    mask_p.set_defaults(func=_show_mask)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format='%(asctime)s %(name)s %(message)s')
    try:
        return args.func(args)
    except InvalidArgument as e:
        print(f'error: {e}', file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except (EvoRLError, OSError) as e:
        logger.debug('Runtime fault', exc_info=True)
        print(f'error: {e}', file=sys.stderr)
        return EXIT_RUNTIME_FAULT


if __name__ == '__main__':
    sys.exit(main())
