"""
HGC

A command line tool for semi-supervised hyperspectral image classification
with superpixel graphs, graph partitioning and cluster-batched graph
convolutional networks.
"""
import argparse
import logging
import sys
from typing import Dict, List, Optional

from hgc import constants, evaluation, hsi_io, logutils, pipeline, synthetic, utils


def main(argv: Optional[List[str]] = None):
    try:
        # Prepare for execution.
        args = parse_args(argv)
        initialise(args)

        # Dispatch to the sub-command.
        args.func(args)

    except Exception as e:  # pylint: disable=broad-exception-caught
        logging.exception(str(e))
        print(f"ERROR: {str(e)}")
        sys.exit(exit_code(e))


def exit_code(error: BaseException) -> int:
    """2 when a missing file caused the failure, 1 otherwise."""
    current: Optional[BaseException] = error
    while current is not None:
        if isinstance(current, FileNotFoundError):
            return 2
        current = current.__cause__
    return 1


def load_config(args: argparse.Namespace) -> hsi_io.RunConfig:
    """Read the config file and apply command-line overrides."""
    config = hsi_io.load_run_config(args.config).with_overrides(seed=args.seed)
    logutils.log_config(config.to_dict(), args.config)
    return config


def print_timings(timings: Dict[str, Optional[float]]) -> None:
    for stage, seconds in timings.items():
        shown = "skipped" if seconds is None else f"{seconds:.3f} s"
        print(f"{stage:>10}: {shown}")


def cmd_run(args: argparse.Namespace) -> None:
    config = load_config(args)
    report, timings = pipeline.run_pipeline(config, args.out_dir, args.force)
    print(evaluation.format_metrics_table(report, config.class_names or None))
    if args.time:
        print_timings(timings)


def cmd_sweep(args: argparse.Namespace) -> None:
    config = load_config(args)
    grid = parse_grid(args.grid or [])
    rows = pipeline.run_sweep(config, args.out_dir, grid, args.num_seeds)
    print(f"Sweep finished: {len(rows)} grid points summarised in {args.out_dir}")


def cmd_stage(args: argparse.Namespace) -> None:
    config = load_config(args)
    seconds = pipeline.run_stage(args.stage, config, args.out_dir, args.force)
    if args.time:
        print_timings({args.stage: seconds})


def cmd_inspect(args: argparse.Namespace) -> None:
    print(pipeline.describe_artifact(args.artifact))


def cmd_synth(args: argparse.Namespace) -> None:
    config_path = synthetic.write_synthetic(args.out_dir, args.seed or 0)
    print(f"Synthetic dataset written; run it with: hgc run --config {config_path}")


def parse_grid(specs: List[str]) -> Dict[str, List[int]]:
    """Parse repeated `key=v1,v2,...` sweep specifications.

    Raises:
        ValueError: On a malformed specification or a non-integer value.
    """
    grid: Dict[str, List[int]] = {}
    for spec in specs:
        if "=" not in spec:
            raise ValueError(f"Sweep grid must look like key=v1,v2, got {spec!r}")
        key, values = spec.split("=", 1)
        try:
            grid[key.strip()] = [int(v) for v in values.split(",") if v.strip()]
        except ValueError as e:
            raise ValueError(f"Sweep values for {key!r} must be integers") from e
    return grid


def initialise(args: argparse.Namespace) -> None:
    """Prepare the output directory and logging.

    Args:
        args (argparse.Namespace): Runtime parameters.
    """
    if args.command == "inspect":
        return
    utils.ensure_dir(args.out_dir)
    logutils.setup_logging(args, constants.NAME_LOGFILE)


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse the command line.

    Returns:
        argparse.Namespace: Runtime parameters.
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--out-dir",
        type=str,
        default="hgc_output",
        help="Directory for artifacts, the manifest and the log file",
    )
    common.add_argument(
        "--seed",
        type=int,
        default=None,
        help="Override the configured seed",
    )
    common.add_argument(
        "--debug",
        action="store_true",
        help="Log at DEBUG level",
    )

    configured = argparse.ArgumentParser(add_help=False, parents=[common])
    configured.add_argument(
        "--config",
        type=str,
        required=True,
        help="Run configuration (JSON or key=value text)",
    )
    configured.add_argument(
        "--force",
        action="store_true",
        help="Re-run stages and accept stale upstream artifacts",
    )
    configured.add_argument(
        "--time",
        action="store_true",
        help="Print the wall-clock time of every stage",
    )

    parser = argparse.ArgumentParser(
        description="Hyperspectral graph clustering and GCN classification"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", parents=[configured], help="Run every stage")
    run.set_defaults(func=cmd_run)

    sweep = commands.add_parser(
        "sweep", parents=[configured], help="Run a grid of configurations"
    )
    sweep.add_argument(
        "--grid",
        action="append",
        help=f"Grid over one of {pipeline.SWEEP_KEYS}, e.g. c=1,5 (repeatable)",
    )
    sweep.add_argument(
        "--num-seeds",
        type=int,
        default=constants.DEFAULT_SWEEP_SEEDS,
        help="Seeds per grid point when the grid has no seed key",
    )
    sweep.set_defaults(func=cmd_sweep)

    stage = commands.add_parser(
        "stage", parents=[configured], help="Run exactly one stage"
    )
    stage.add_argument("stage", choices=constants.STAGES)
    stage.set_defaults(func=cmd_stage)

    inspect = commands.add_parser("inspect", help="Summarise an artifact")
    inspect.add_argument("artifact", type=str)
    inspect.set_defaults(func=cmd_inspect)

    synth = commands.add_parser(
        "synth", parents=[common], help="Write the synthetic quadrant dataset"
    )
    synth.set_defaults(func=cmd_synth, force=False)

    return parser.parse_args(argv)


if __name__ == "__main__":
    main()
