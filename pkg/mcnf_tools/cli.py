"""Command-line interface for MCNF Tools"""

import argparse
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .checks import run_checks
from .config import load_config
from .constants import CENTERS_FILE, SAMPLES_FILE
from .exceptions import CheckpointError, McnfError
from .field import FlowField
from .net import load_checkpoint
from .reporting import (
    RunReporter,
    print_check_results,
    print_eval_summary,
    print_run_header,
    print_saved_files,
    print_train_summary,
)
from .targets import load_centers, make_target
from .train import evaluate, initial_field, train

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _apply_overrides(config, args):
    if getattr(args, 'seed', None) is not None:
        config = config.with_seed(args.seed)
    if getattr(args, 'threads', None) is not None:
        config = config.with_threads(args.threads)
    return config


def cmd_train(args):
    """Train a flow, then evaluate it; writes checkpoint, log, centers and eval report"""
    config = _apply_overrides(load_config(args.config), args)
    print_run_header("MCNF TRAINING", config)

    manifold = config.build_manifold()
    target = config.build_target(manifold)
    ff = initial_field(manifold, config.seed)
    reporter = RunReporter(config.output_dir)

    started = time.perf_counter()
    result = train(ff, target, config.train, solver=config.solver)
    trained = ff.with_params(result.params)
    paths = [
        reporter.write_config(config),
        reporter.write_checkpoint(result.params, config, len(result.records)),
        reporter.write_train_log(result.records),
        reporter.write_centers(target),
    ]
    print_train_summary(result.records)

    report = evaluate(trained, target, config.train, solver=config.eval_solver)
    paths.append(reporter.write_eval(report, config, wall_seconds=time.perf_counter() - started))
    print_eval_summary(report)
    print_saved_files(paths)
    return 0


def _eval_target(config, manifold, checkpoint_path):
    """Target of the training run: centers.json next to the checkpoint wins over the config"""
    saved = Path(checkpoint_path).parent / CENTERS_FILE
    t = config.target
    if t.centers_file or t.family in ('conjugation_invariant', 'base') or not saved.exists():
        return config.build_target(manifold)
    logger.info("using centers from %s", saved)
    return make_target(manifold, t.family, t.beta, centers=load_centers(saved, manifold),
                       coefficients=t.coefficients)


def cmd_eval(args):
    """Evaluate a checkpoint against the configured target"""
    config = load_config(args.config)
    if args.threads is not None:
        config = config.with_threads(args.threads)
    print_run_header("MCNF EVALUATION", config)

    manifold = config.build_manifold()
    params, header = load_checkpoint(args.checkpoint)
    if header.get('manifold') != str(manifold.spec):
        raise CheckpointError(
            f"{args.checkpoint} was trained on {header.get('manifold')}, config names {manifold.spec}"
        )
    ff = FlowField(manifold, params)
    target = _eval_target(config, manifold, args.checkpoint)
    reporter = RunReporter(config.output_dir)

    started = time.perf_counter()
    report = evaluate(
        ff, target, config.train, solver=config.eval_solver,
        seed=args.seed, keep_samples=args.samples_out is not None,
    )
    paths = [reporter.write_eval(report, config, wall_seconds=time.perf_counter() - started)]
    if args.samples_out is not None:
        out = Path(args.samples_out)
        if out.is_dir():
            out = out / SAMPLES_FILE
        paths.append(reporter.write_samples(report.samples, path=out))
    print_eval_summary(report)
    print_saved_files(paths)
    return 0


def cmd_check(args):
    """Run the property gate; exit status 1 if any check fails"""
    print(f"Running {'quick ' if args.quick else ''}property checks...")
    print()
    results = run_checks(quick=args.quick)
    print_check_results(results)
    return 0 if all(r.passed for r in results) else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog='mcnf',
        description="Continuous normalizing flows on manifolds: train, evaluate and self-check.",
    )
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest='command', required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('-v', '--verbose', action='store_true', help="debug logging")

    p_train = sub.add_parser('train', parents=[common], help="train a flow from a TOML config")
    p_train.add_argument('config', help="experiment config (TOML)")
    p_train.add_argument('--threads', type=int, help="worker threads for sample chunks")
    p_train.add_argument('--seed', type=int, help="override the config seed")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser('eval', parents=[common], help="evaluate a checkpoint")
    p_eval.add_argument('checkpoint', help="checkpoint.bin written by train")
    p_eval.add_argument('config', help="experiment config (TOML)")
    p_eval.add_argument('--threads', type=int, help="worker threads for sample chunks")
    p_eval.add_argument('--seed', type=int, help="seed of the evaluation samples")
    p_eval.add_argument('--samples-out', help="write model samples as CSV to this path")
    p_eval.set_defaults(func=cmd_eval)

    p_check = sub.add_parser('check', parents=[common], help="run the numerical property checks")
    p_check.add_argument('--quick', action='store_true', help="skip the slow adjoint checks")
    p_check.set_defaults(func=cmd_check)
    return parser


def main(argv=None):
    """Main entry point for the mcnf command"""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)
    if getattr(args, 'threads', None) is not None and args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except (McnfError, OSError) as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return 2


def main_train():
    """Main entry point for mcnf-train command"""
    return main(['train'] + sys.argv[1:])


def main_eval():
    """Main entry point for mcnf-eval command"""
    return main(['eval'] + sys.argv[1:])


def main_check():
    """Main entry point for mcnf-check command"""
    return main(['check'] + sys.argv[1:])


if __name__ == '__main__':
    sys.exit(main())
