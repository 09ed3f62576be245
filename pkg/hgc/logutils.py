"""
HGC logging utility functions

The log file lives in the run's output directory and is appended to, so a
directory that is re-run keeps the history of every invocation.
"""

import argparse
import logging
import os
from importlib import metadata
from typing import Any, Dict

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


def setup_logging(args: argparse.Namespace, logfilename: str) -> None:
    """Send the root logger to `<out_dir>/<logfilename>`.

    The first line of every invocation names the sub-command and the
    installed hgc version.

    Args:
        args (argparse.Namespace): Runtime arguments (out_dir, debug, force).
        logfilename (str): Name of logfile.
    """
    level = logging.DEBUG if args.debug else logging.INFO
    log_full_path = os.path.join(args.out_dir, logfilename)
    logging.basicConfig(
        filename=log_full_path,
        filemode="a",
        format=LOG_FORMAT,
        level=level,
        force=True,
    )
    logging.info(
        "hgc %s started by %s v.%s",
        getattr(args, "command", None),
        __package__,
        metadata.version("hgc"),
    )
    if args.force:
        logging.info("FORCE mode: stale upstream artifacts will be accepted.")

    print(f"Logging to the output directory at: {log_full_path}")


def log_config(values: Dict[str, Any], source: str) -> None:
    """One INFO line per configuration key, sorted, for provenance."""
    logging.info("Run configuration from %s:", source)
    for key in sorted(values):
        logging.info("  %s = %r", key, values[key])
