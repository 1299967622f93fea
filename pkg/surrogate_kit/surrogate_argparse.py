#! /usr/bin/env python3
# surrogate_argparse.py
# Part of surrogate_kit
# Copyright 2024 surrogate_kit contributors.  Licensed under GNU Affero GPL v.3 or later.
"""Argument parser for surrogate.py.

The primary function for external use is make_surrogate_arg_parser.

Also includes routines for adding common arguments to the subcommand parsers.
"""

import argparse

# For the choice of the forward model:
from surrogate_kit.runtime_config import forward_model_choices


def add_config_argument(parser: argparse.ArgumentParser):
    """Add the common --config argument to a parser."""
    parser.add_argument(
        "--config",
        "-c",
        dest="config_file",
        help="""Run configuration, a .toml file (or a .json file with the same structure).
                Keys not given take their documented defaults.
             """,
        required=True,
    )


def add_seed_argument(parser: argparse.ArgumentParser):
    """Add the common --seed argument to a parser."""
    parser.add_argument(
        "--seed",
        help="""Random seed.  Overrides the seed in the configuration file.
                Runs with the same configuration and seed are reproducible.""",
        type=int,
        default=None,
    )


def add_output_dirname_argument(parser: argparse.ArgumentParser):
    """Add the common --output-dir argument to a parser."""
    parser.add_argument(
        "--output-directory",
        "--output-dir",
        "--out",
        "-o",
        dest="output_dirname",
        help="""Directory to put the run artifacts in.
                Default is ~/.local/share/surrogate_kit/runs/<run name>""",
        default=None,
    )


def add_max_work_argument(parser: argparse.ArgumentParser):
    """Add the --max-work argument to a parser."""
    parser.add_argument(
        "--max-work",
        dest="max_work",
        help="""Cap on the total computational work of the run.""",
        type=float,
        default=None,
    )


def add_model_argument(parser: argparse.ArgumentParser):
    """Add the --model argument to a parser."""
    parser.add_argument(
        "--model",
        "-m",
        dest="model_name",
        help="""Forward model to use.  Overrides [model] name in the configuration file.""",
        choices=forward_model_choices,
        default=None,
    )


def add_from_run_argument(parser: argparse.ArgumentParser, required: bool = False):
    """Add the --from-run argument to a parser."""
    parser.add_argument(
        "--from-run",
        dest="from_run",
        help="""Directory of an earlier run.
                The surrogate is retrained on that run's design.csv.""",
        required=required,
    )


def add_debug_argument(parser: argparse.ArgumentParser):
    """Add the common --debug argument to a parser."""
    parser.add_argument(
        "--debug",
        dest="debug",
        help="""Set debugging level, from 0 to 3 (default 1).
                1 reports each iteration; higher levels report the internals of every step.""",
        type=int,
        action="store",
        default=1,
    )


def add_common_arguments(parser: argparse.ArgumentParser):
    """Arguments every subcommand takes."""
    add_config_argument(parser)
    add_seed_argument(parser)
    add_output_dirname_argument(parser)
    add_model_argument(parser)
    add_debug_argument(parser)


def make_surrogate_arg_parser():
    """Make argument parser for surrogate.py."""
    parser = argparse.ArgumentParser(
        formatter_class=argparse.RawDescriptionHelpFormatter,
        description="""Build an adaptive Gaussian process surrogate of an expensive model
for a Bayesian inverse problem, choosing evaluation points and accuracies together.""",
    )
    subparsers = parser.add_subparsers(dest="command", metavar="command")

    run_parser = subparsers.add_parser(
        "run",
        help="""Adapt evaluation positions and accuracies until the global error is below tolerance.""",
    )
    add_common_arguments(run_parser)
    add_max_work_argument(run_parser)

    baseline_parser = subparsers.add_parser(
        "baseline",
        help="""Position-adaptive baseline: every point evaluated at one fixed tolerance.""",
    )
    add_common_arguments(baseline_parser)
    add_max_work_argument(baseline_parser)
    baseline_parser.add_argument(
        "--epsilon",
        "--eps",
        dest="epsilon",
        help="""Fixed evaluation tolerance.  Overrides [baseline] tolerance.""",
        type=float,
        default=None,
    )

    reliability_parser = subparsers.add_parser(
        "reliability",
        help="""Compare the estimated local error with the actual reconstruction error.""",
    )
    add_common_arguments(reliability_parser)
    add_from_run_argument(reliability_parser, required=True)
    reliability_parser.add_argument(
        "--points",
        help="""Number of random parameter points.  Overrides [reliability] points.""",
        type=int,
        default=None,
    )
    reliability_parser.add_argument(
        "--draws",
        help="""Noise draws per point.  Overrides [reliability] draws.""",
        type=int,
        default=None,
    )

    reconstruct_parser = subparsers.add_parser(
        "reconstruct",
        help="""MAP estimate and Laplace standard deviations from a trained surrogate.""",
    )
    add_common_arguments(reconstruct_parser)
    add_from_run_argument(reconstruct_parser, required=True)
    reconstruct_parser.add_argument(
        "--p-true",
        dest="p_true",
        help="""True parameter; the measurement is the exact model output there.""",
        type=float,
        nargs="+",
        default=None,
    )
    reconstruct_parser.add_argument(
        "--measurement",
        help="""Measured output vector.  Takes priority over --p-true.""",
        type=float,
        nargs="+",
        default=None,
    )
    return parser
