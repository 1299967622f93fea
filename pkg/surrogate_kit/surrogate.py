#! /usr/bin/env python3
# surrogate.py
# Part of surrogate_kit
# Copyright 2024 surrogate_kit contributors.  Licensed under GNU Affero GPL v.3 or later.
"""Build adaptive surrogates.

surrogate.py is the main program for surrogate runs and the studies done with them
surrogate.py --help gives documentation

Exit status: 0 when the run converged (or the study finished), 2 when a work or
iteration cap stopped the run first, 1 on errors.
"""

#########################
# Other people's packages

import sys  # sys.exit(0), sys.exit(1), sys.exit(2)

############
# My modules
from surrogate_kit.adaptive import (
    adaptive_run,
    fit_surrogate,
    position_adaptive_run,
    reconstruct,
    reliability_study,
    setup_forward_model,
)
from surrogate_kit.artifacts import RunArtifacts, load_training_data
from surrogate_kit.debug import set_debug_level, debug_print
from surrogate_kit.errors import SurrogateKitError
from surrogate_kit.run_config import RunConfig
from surrogate_kit.surrogate_argparse import make_surrogate_arg_parser

EXIT_CONVERGED = 0
EXIT_ERROR = 1
EXIT_CAP_REACHED = 2


def load_config(args) -> RunConfig:
    """The configuration file with the command-line overrides applied."""
    cfg = RunConfig.from_file(args.config_file)
    return cfg.with_overrides(
        seed=args.seed,
        output_dir=args.output_dirname,
        max_work=getattr(args, "max_work", None),
        model={"name": args.model_name},
    )


def run_command(args) -> int:
    """Carry out one subcommand; returns the exit status."""
    cfg = load_config(args)
    match args.command:
        case "run":
            artifacts = adaptive_run(cfg)
        case "baseline":
            artifacts = position_adaptive_run(cfg, args.epsilon)
        case "reliability":
            model = setup_forward_model(cfg)
            data = load_training_data(args.from_run, model.domain)
            artifacts = RunArtifacts(cfg, kind="reliability", data=data)
            artifacts.reliability = reliability_study(cfg, data, args.points, args.draws)
            artifacts.converged = True
            artifacts.termination = "reliability study finished"
        case "reconstruct":
            model = setup_forward_model(cfg)
            data = load_training_data(args.from_run, model.domain)
            surrogate = fit_surrogate(data)
            artifacts = RunArtifacts(
                cfg, kind="reconstruct", data=data, hyperparameters=surrogate.hyperparameters
            )
            artifacts.reconstruction = reconstruct(
                cfg, surrogate, model, args.p_true, args.measurement
            )
            artifacts.converged = artifacts.reconstruction.converged
            artifacts.termination = "reconstruction finished"
        case _:
            raise AssertionError(f"Unhandled command {args.command!r}")

    out_dir = artifacts.write()
    print(out_dir)
    if artifacts.kind in ("adaptive", "baseline") and not artifacts.converged:
        print("Stopped before reaching the tolerance:", artifacts.termination)
        return EXIT_CAP_REACHED
    return EXIT_CONVERGED


def main(argv: list[str] | None = None):
    """Main program to run from the command line.

    Contains everything involving processing command line arguments.
    """

    debug_print(3, "Dumping sys.argv for clarity:", sys.argv)

    my_arg_parser = make_surrogate_arg_parser()
    args = my_arg_parser.parse_args(argv)

    # Make sure user has provided a subcommand
    # Otherwise, provide help
    if args.command is None:
        my_arg_parser.print_help()
        sys.exit(EXIT_ERROR)

    set_debug_level(args.debug)
    debug_print(2, f"Successfully set debug level to {args.debug}.")

    try:
        status = run_command(args)
    except SurrogateKitError as error:
        print(f"{type(error).__name__}: {error}", file=sys.stderr)
        sys.exit(EXIT_ERROR)
    sys.exit(status)


##########################
#### MAIN PROGRAM ####
##########################
if __name__ == "__main__":
    main()
