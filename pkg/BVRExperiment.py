"""Command line entry point of the simulator.

    python BVRExperiment.py run     --config experiment.yaml [--set run.K=16] [--out results/x] [--threads 4]
    python BVRExperiment.py sweep   --config experiments/label_skew.yaml --out results/label_skew
    python BVRExperiment.py compare --out results/label_skew
    python BVRExperiment.py certify --out results/saddle --certify 0.01 6.0
    python BVRExperiment.py run     --manifest results/x/manifest.json --out results/x_rerun

Exit codes: 0 success, 1 one or more runs failed or aborted, 2 invalid configuration.
"""

import argparse
import logging
import os
import sys

import pydantic
import yaml

from bvrsim.Harness import (CertifySpec, ResultTable, apply_overrides, certify_saved, compare_selected,
                            describe_validation_error, load_config, load_manifest_config, run_experiment,
                            tune_select, write_outputs, write_tuning)
from bvrsim.Settings import Settings

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED_RUNS, EXIT_INVALID_CONFIG = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Simulate bias-variance reduced local perturbed SGD and its baselines.')
    subcommands = parser.add_subparsers(dest='command', required=True)

    def add_common(sub, config_required=True):
        sub.add_argument('--config', metavar='PATH', required=config_required, help='YAML experiment file')
        sub.add_argument('--set', dest='overrides', metavar='KEY=VALUE', action='append', default=[],
                         help='override a config field, e.g. run.K=16 (repeatable)')
        sub.add_argument('--out', metavar='DIR', help='output directory (default: OUTPUT_DIR/<name>)')
        sub.add_argument('--threads', type=int, metavar='N', help='runs executed in parallel')
        sub.add_argument('--restarts', type=int, metavar='R', help='independent repetitions of every trial')
        sub.add_argument('--certify', type=float, nargs=2, metavar=('EPS', 'RHO'),
                         help='scan the candidate iterates for an EPS-second-order point with Hessian constant RHO')
        sub.add_argument('--quiet', action='store_true', help='no progress bar')

    run = subcommands.add_parser('run', help='execute every algorithm x grid point x trial')
    add_common(run, config_required=False)
    run.add_argument('--manifest', metavar='PATH', help='re-execute the experiment stored in a manifest')

    sweep = subcommands.add_parser('sweep', help='run, then select a grid point per algorithm and write plot data')
    add_common(sweep)

    compare = subcommands.add_parser('compare', help='compare the selected grid points of finished runs')
    compare.add_argument('--out', metavar='DIR', required=True, help='directory holding raw.csv')
    compare.add_argument('--rule', choices=['max-min-train-accuracy', 'min-final-train-loss'],
                         default='max-min-train-accuracy')

    certify = subcommands.add_parser('certify', help='scan saved checkpoints for second-order points')
    certify.add_argument('--out', metavar='DIR', required=True, help='directory holding manifest.json and checkpoints/')
    certify.add_argument('--certify', type=float, nargs=2, metavar=('EPS', 'RHO'), required=True)
    return parser


def resolve_config(args):
    if getattr(args, 'manifest', None):
        config = load_manifest_config(args.manifest)
        if args.overrides:
            config = type(config).model_validate(apply_overrides(config.model_dump(mode='json'), args.overrides))
    elif args.config:
        config = load_config(args.config, args.overrides)
    else:
        raise ValueError("either --config or --manifest is required")
    updates = {}
    if args.restarts:
        updates['restarts'] = args.restarts
    if args.certify:
        updates['certify'] = CertifySpec(eps=args.certify[0], rho=args.certify[1])
    if updates:
        config = type(config).model_validate({**config.model_dump(), **updates})
    return config


def execute(args) -> int:
    try:
        config = resolve_config(args)
    except pydantic.ValidationError as e:
        for line in describe_validation_error(e):
            logger.error(f"invalid config: {line}")
        return EXIT_INVALID_CONFIG
    except (yaml.YAMLError, ValueError, OSError) as e:
        logger.error(f"invalid config: {e}")
        return EXIT_INVALID_CONFIG

    out_dir = args.out or config.output.dir or os.path.join(Settings().OUTPUT_DIR, config.name)
    experiment = run_experiment(config, threads=args.threads, progress=not args.quiet)
    write_outputs(experiment, out_dir)
    if args.command == 'sweep':
        write_tuning(experiment.table, out_dir, config.tuning.selection_rule)
    for report in experiment.sosp_reports:
        logger.info(f"{report['algorithm']} eta={report['eta']} r={report['r']} trial={report['trial']} "
                    f"restart={report['restart']}: second-order point found={report['found']} at {report['index']}")
    failures = experiment.table.failures
    if not failures.empty:
        logger.error(f"{len(failures)} run(s) failed or aborted, see the status column of raw.csv")
        return EXIT_FAILED_RUNS
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(Settings().LOG_LEVEL).upper(), logging.INFO),
                        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    match args.command:
        case 'run' | 'sweep':
            return execute(args)
        case 'compare':
            table = ResultTable.read_csv(os.path.join(args.out, 'raw.csv'))
            comparison = compare_selected(table, tune_select(table, args.rule))
            comparison.to_csv(os.path.join(args.out, 'comparison.csv'), index=False,
                              float_format=Settings().FLOAT_FORMAT)
            print(comparison.to_string(index=False))
            return EXIT_OK
        case 'certify':
            eps, rho = args.certify
            reports = certify_saved(args.out, eps, rho)
            found = sum(report['found'] for report in reports)
            print(f"{found} of {len(reports)} runs contain a certified {eps}-second-order point")
            return EXIT_OK if reports else EXIT_FAILED_RUNS


if __name__ == "__main__":
    sys.exit(main())
