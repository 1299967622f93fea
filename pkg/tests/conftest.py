# conftest.py
# Part of surrogate_kit
# Copyright 2024 surrogate_kit contributors.  Licensed under GNU Affero GPL v.3 or later.
"""Shared fixtures for the surrogate_kit tests."""

import numpy as np
import pytest

from surrogate_kit.convenience_types import make_box
from surrogate_kit.gp_core import Design, Hyperparameters, TrainingData, fit


@pytest.fixture
def unit_square():
    return make_box([0.0, 0.0], [1.0, 1.0])


@pytest.fixture
def unit_interval():
    return make_box([0.0], [1.0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_training_data(rng, domain, n=5, m=2, tolerance_range=(0.01, 0.1)) -> TrainingData:
    """n random points in the domain with random values and tolerances."""
    points = domain.scale(rng.random((n, domain.dim)))
    tolerances = rng.uniform(*tolerance_range, size=n)
    values = rng.normal(size=(n, m))
    return TrainingData(Design(points, tolerances, domain), values)


@pytest.fixture
def small_model(rng, unit_square):
    """A fitted surrogate with 6 points and 3 outputs on the unit square."""
    data = random_training_data(rng, unit_square, n=6, m=3)
    return fit(data, Hyperparameters(1.0, [0.4, 0.3]))
