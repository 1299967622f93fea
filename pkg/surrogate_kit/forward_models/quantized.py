# forward_models/quantized.py
# Part of surrogate_kit
# Copyright 2024 surrogate_kit contributors.  Licensed under GNU Affero GPL v.3 or later.
"""Forward model with discrete refinement levels.

Mimics a finite element solver on a hierarchy of meshes: only the
tolerances eps_l = eps_0 * ratio**l are reachable, so a request lands on
the coarsest level that meets it and usually costs more than planned.
"""

import math

import numpy as np

from surrogate_kit.convenience_types import Point
from surrogate_kit.errors import InputError
from surrogate_kit.forward_models.contract import ForwardModel
from surrogate_kit.work_budget import WorkModel

MAX_LEVEL = 60


class QuantizedLevelModel(ForwardModel):
    """Wraps a smooth model; achieved tolerance is the largest eps_l <= request."""

    name = "quantized"

    def __init__(
        self,
        base: ForwardModel,
        coarsest_tolerance: float = 0.1,
        ratio: float = 0.5,
        work_model: WorkModel | None = None,
        seed: int = 0,
        noise: str = "gaussian",
    ) -> None:
        if not coarsest_tolerance > 0:
            raise InputError("Coarsest tolerance must be positive")
        if not 0 < ratio < 1:
            raise InputError("Level ratio must lie in (0, 1)")
        super().__init__(work_model or WorkModel.fe(order=2, spatial_dim=2), seed, noise)
        self.base = base
        self.coarsest_tolerance = coarsest_tolerance
        self.ratio = ratio
        self.input_dim = base.input_dim
        self.output_dim = base.output_dim
        self.domain = base.domain

    def level_tolerance(self, level: int) -> float:
        return self.coarsest_tolerance * self.ratio**level

    def level_of(self, requested: float) -> int:
        """Smallest level whose tolerance meets the request."""
        if requested >= self.coarsest_tolerance:
            return 0
        level = math.ceil(math.log(requested / self.coarsest_tolerance) / math.log(self.ratio))
        # Round-off in the logarithms
        while level > 0 and self.level_tolerance(level - 1) <= requested:
            level -= 1
        while self.level_tolerance(level) > requested:
            level += 1
        if level > MAX_LEVEL:
            raise InputError(f"Tolerance {requested:g} needs more than {MAX_LEVEL} levels")
        return level

    def achieved_tolerance(self, requested: float) -> float:
        return self.level_tolerance(self.level_of(requested))

    def value(self, p: Point) -> np.ndarray:
        return self.base.value(p)

    def jacobian(self, p: Point) -> np.ndarray:
        return self.base.jacobian(p)
