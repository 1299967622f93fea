# forward_models/parabolic_cylinder.py
# Part of surrogate_kit
# Copyright 2024 surrogate_kit contributors.  Licensed under GNU Affero GPL v.3 or later.
"""Rotated parabolic cylinder: an analytic test model.

y_j(p) = (cos(phi_j) (p1 + p2) + sin(phi_j) (p2 - p1))**2 on [0, 1]**2,
i.e. y_j = (a_j . p)**2 with a_j = (cos phi_j - sin phi_j, cos phi_j + sin phi_j).
Angles are in radians.
"""

import numpy as np

from surrogate_kit.convenience_types import Point, make_box
from surrogate_kit.error_model import BoundConstants
from surrogate_kit.forward_models.contract import ForwardModel
from surrogate_kit.work_budget import WorkModel

DEFAULT_ANGLES = (0.0, 2.0, 4.0)


class ParabolicCylinderModel(ForwardModel):
    name = "parabolic-cylinder"
    input_dim = 2
    domain = make_box([0.0, 0.0], [1.0, 1.0])

    def __init__(
        self,
        angles=DEFAULT_ANGLES,
        work_model: WorkModel | None = None,
        seed: int = 0,
        noise: str = "gaussian",
    ) -> None:
        super().__init__(work_model or WorkModel.generic(0.5), seed, noise)
        angles = np.asarray(angles, dtype=float)
        self.angles = angles
        self.output_dim = len(angles)
        self.directions = np.column_stack(
            [np.cos(angles) - np.sin(angles), np.cos(angles) + np.sin(angles)]
        )

    def value(self, p: Point) -> np.ndarray:
        return (self.directions @ np.asarray(p, dtype=float)) ** 2

    def jacobian(self, p: Point) -> np.ndarray:
        projections = self.directions @ np.asarray(p, dtype=float)
        return 2.0 * projections[:, None] * self.directions

    def bound_constants(self, p: Point, sigma_l, prior_precision=None) -> BoundConstants:
        """Closed-form derivative bounds over the domain, and L_min at p.

        The Jacobian is linear in p, so its norm peaks at a corner.
        """
        corners = np.array([[x, y] for x in (0.0, 1.0) for y in (0.0, 1.0)])
        c1 = max(np.linalg.norm(self.jacobian(corner), ord=2) for corner in corners)
        # Second derivative of y_j is the constant 2 a_j a_j^T
        c2 = 2.0 * np.sqrt(np.sum(np.sum(self.directions**2, axis=1) ** 2))
        jacobian = self.jacobian(p)
        precision = np.linalg.inv(np.atleast_2d(np.asarray(sigma_l, dtype=float)))
        matrix = jacobian.T @ precision @ jacobian
        if prior_precision is not None:
            matrix = matrix + prior_precision
        l_min = float(np.linalg.eigvalsh(matrix)[0])
        return BoundConstants(float(c1), float(c2), l_min)
