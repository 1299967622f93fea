# runtime_config.py
# Part of surrogate_kit
# Copyright 2024 surrogate_kit contributors.  Licensed under GNU Affero GPL v.3 or later.
"""This file holds the critical choice of which forward model to use.

The choices feed the --model flag; build_forward_model turns a choice and
its [model] section into the model a run evaluates.
"""

from surrogate_kit.debug import debug_print
from surrogate_kit.errors import InputError
from surrogate_kit.forward_models import ForwardModel, ParabolicCylinderModel, QuantizedLevelModel
from surrogate_kit.work_budget import WorkModel

# These are the choices which can be set in the run configuration.
forward_model_choices = ["parabolic-cylinder", "quantized"]


def build_forward_model(
    name: str,
    params: dict,
    work_model: WorkModel,
    seed: int = 0,
    noise: str = "gaussian",
) -> ForwardModel:
    """Construct a forward model by name from its parameter section."""
    params = dict(params)
    match name:
        case "parabolic-cylinder":
            debug_print(2, "Using the rotated parabolic cylinder model")
            return ParabolicCylinderModel(
                angles=params.pop("angles", (0.0, 2.0, 4.0)),
                work_model=work_model,
                seed=seed,
                noise=noise,
            )
        case "quantized":
            debug_print(2, "Using the quantized-level model")
            base_name = params.pop("base", "parabolic-cylinder")
            if base_name == "quantized":
                raise InputError("A quantized model can't wrap another quantized model")
            base = build_forward_model(
                base_name, {"angles": params.pop("angles", (0.0, 2.0, 4.0))}, work_model, seed, noise
            )
            return QuantizedLevelModel(
                base,
                coarsest_tolerance=params.pop("coarsest_tolerance", 0.1),
                ratio=params.pop("ratio", 0.5),
                work_model=work_model,
                seed=seed,
                noise=noise,
            )
        case _:
            raise InputError(
                f"Invalid forward model choice {name!r}; choose from {forward_model_choices}"
            )
