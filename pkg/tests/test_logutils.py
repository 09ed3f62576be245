"""Tests for logutils.py"""

import argparse

from hgc import logutils


def run_args(command, debug=False, force=False):
    return argparse.Namespace(
        command=command, out_dir="/home/out", debug=debug, force=force
    )


def read_lines(path):
    with open(path, "r") as reader:
        return reader.readlines()


def test_setup_logging(fs, mocker):
    mocker.patch("importlib.metadata.version", return_value="0.1.0")
    fs.create_dir("/home/out")

    args = run_args("run")
    logutils.setup_logging(args, "hgc.log")
    lines = read_lines("/home/out/hgc.log")
    assert len(lines) == 1
    assert "INFO" in lines[0]
    assert "hgc run started" in lines[0]
    assert "v.0.1.0" in lines[0]

    # A second invocation appends, and force adds a line.
    args = run_args("stage", debug=True, force=True)
    logutils.setup_logging(args, "hgc.log")
    lines = read_lines("/home/out/hgc.log")
    assert len(lines) == 3
    assert "hgc stage started" in lines[1]
    assert "FORCE" in lines[-1]


def test_log_config(fs, mocker):
    mocker.patch("importlib.metadata.version", return_value="0.1.0")
    fs.create_dir("/home/out")
    args = run_args("run")
    logutils.setup_logging(args, "hgc.log")

    logutils.log_config({"seed": 3, "c": 5}, "/home/run.cfg")
    lines = read_lines("/home/out/hgc.log")
    assert "Run configuration from /home/run.cfg" in lines[1]
    assert lines[2].rstrip().endswith("c = 5")
    assert lines[3].rstrip().endswith("seed = 3")
