# forward_models/__init__.py
# Part of surrogate_kit
# Copyright 2024 surrogate_kit contributors.  Licensed under GNU Affero GPL v.3 or later.
"""Built-in tolerance-controlled forward models."""

from surrogate_kit.forward_models.contract import Evaluation, ForwardModel
from surrogate_kit.forward_models.parabolic_cylinder import ParabolicCylinderModel
from surrogate_kit.forward_models.quantized import QuantizedLevelModel

__all__ = ["Evaluation", "ForwardModel", "ParabolicCylinderModel", "QuantizedLevelModel"]
