# convenience_types.py
# Part of surrogate_kit
# Copyright 2024 surrogate_kit contributors.  Licensed under GNU Affero GPL v.3 or later.
"""Types used for extra type-checking."""

from typing import NamedTuple, Protocol, TypeAlias

import numpy as np

# A single parameter point, shape (d,)
Point: TypeAlias = np.ndarray

# A stack of parameter points, shape (N, d)
PointArray: TypeAlias = np.ndarray


class Evaluable(Protocol):
    """Anything the inverse solver can minimize against.

    Both the exact forward models and the fitted surrogate provide this.
    """

    def value(self, p: Point) -> np.ndarray:
        ...

    def jacobian(self, p: Point) -> np.ndarray:
        ...


class Box(NamedTuple):
    """Axis-aligned domain box [lower, upper]."""

    lower: np.ndarray
    upper: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.widths))

    def contains(self, p: Point, slack: float = 0.0) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(
            np.all(p >= self.lower - slack) and np.all(p <= self.upper + slack)
        )

    def clip(self, p: Point) -> np.ndarray:
        return np.clip(p, self.lower, self.upper)

    def scale(self, unit_points: np.ndarray) -> np.ndarray:
        """Map points from the unit cube into the box."""
        return self.lower + unit_points * self.widths


def make_box(lower, upper) -> Box:
    """Build a Box from anything array-like, checking it's sensible."""
    lower = np.asarray(lower, dtype=float).ravel()
    upper = np.asarray(upper, dtype=float).ravel()
    assert lower.shape == upper.shape
    assert np.all(upper >= lower)
    return Box(lower, upper)
