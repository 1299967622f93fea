# forward_models/contract.py
# Part of surrogate_kit
# Copyright 2024 surrogate_kit contributors.  Licensed under GNU Affero GPL v.3 or later.
"""The tolerance-controlled forward model contract.

ForwardModel is the base class; every built-in model inherits from it and
overrides value() and jacobian(), and optionally achieved_tolerance().

Noise seeds are derived from (model seed, p, eps, repeat count), so the
same sequence of orders reproduces bit for bit, while asking twice for the
same (p, eps) gives independent draws.
"""

import hashlib
import threading
from collections import Counter
from typing import NamedTuple

import numpy as np

from surrogate_kit.convenience_types import Box, Point
from surrogate_kit.debug import debug_print
from surrogate_kit.errors import DomainViolation, InputError, RefinementOrderViolation
from surrogate_kit.work_budget import WorkModel

noise_modes = ["gaussian", "exact"]


class Evaluation(NamedTuple):
    """Result of one simulation run (or continuation)."""

    value: np.ndarray
    tolerance: float  # achieved
    work: float  # charged
    planned_work: float = 0.0

    @property
    def surplus(self) -> float:
        """Work charged beyond what the order planned for."""
        return self.work - self.planned_work


class ForwardModel:
    """Base class for tolerance-controlled simulators.

    Subclasses set name, input_dim, output_dim and domain, and provide the
    exact value() and jacobian().
    """

    name = "base"
    input_dim = 0
    output_dim = 0
    domain: Box

    def __init__(self, work_model: WorkModel, seed: int = 0, noise: str = "gaussian") -> None:
        if noise not in noise_modes:
            raise InputError(f"Unknown noise mode {noise!r}")
        self.work_model = work_model
        self.seed = seed
        self.noise = noise
        self._repeats: Counter = Counter()
        self._lock = threading.Lock()

    def value(self, p: Point) -> np.ndarray:
        """Exact model output y(p)."""
        raise NotImplementedError("value() is not implemented for " + self.name)

    def jacobian(self, p: Point) -> np.ndarray:
        """Exact derivative dy/dp, shape (m, d)."""
        raise NotImplementedError("jacobian() is not implemented for " + self.name)

    def achieved_tolerance(self, requested: float) -> float:
        """The tolerance a run asked for `requested` actually reaches."""
        return requested

    def check_point(self, p: Point) -> np.ndarray:
        p = np.asarray(p, dtype=float).ravel()
        if p.shape != (self.input_dim,):
            raise InputError(f"{self.name} expects points of dimension {self.input_dim}")
        if not self.domain.contains(p, slack=1e-12):
            raise DomainViolation(f"Point {p} outside the domain of {self.name}")
        return p

    def noise_seed(self, p: np.ndarray, tolerance: float) -> int:
        """Seed for the noise of one evaluation."""
        key = (p.tobytes(), float(tolerance))
        with self._lock:
            repeat = self._repeats[key]
            self._repeats[key] += 1
        digest = hashlib.sha256()
        digest.update(int(self.seed).to_bytes(8, "little", signed=True))
        digest.update(p.tobytes())
        digest.update(np.float64(tolerance).tobytes())
        digest.update(repeat.to_bytes(8, "little"))
        return int.from_bytes(digest.digest()[:8], "little")

    def _noisy_value(self, p: np.ndarray, tolerance: float) -> np.ndarray:
        value = np.asarray(self.value(p), dtype=float)
        if self.noise == "exact":
            return value
        rng = np.random.default_rng(self.noise_seed(p, tolerance))
        return value + rng.normal(0.0, tolerance, size=value.shape)

    def evaluate_to_tolerance(self, p: Point, requested: float) -> Evaluation:
        """Run the simulation at p to (at least) the requested tolerance."""
        p = self.check_point(p)
        if not requested > 0:
            raise InputError("Requested tolerance must be positive")
        achieved = self.achieved_tolerance(requested)
        evaluation = Evaluation(
            self._noisy_value(p, achieved),
            achieved,
            self.work_model.work(achieved),
            self.work_model.work(requested),
        )
        debug_print(3, f"{self.name}: evaluated {p} to {achieved:.3g}, work {evaluation.work:.6g}")
        return evaluation

    def refine(self, p: Point, previous: float, requested: float) -> Evaluation:
        """Continue an earlier run at p from tolerance `previous` to `requested`.

        Only the extra work is charged.
        """
        p = self.check_point(p)
        if not requested < previous:
            raise RefinementOrderViolation(
                f"Refinement must tighten the tolerance ({previous:g} -> {requested:g})"
            )
        achieved = self.achieved_tolerance(requested)
        already_spent = self.work_model.work(previous)
        evaluation = Evaluation(
            self._noisy_value(p, achieved),
            achieved,
            self.work_model.work(achieved) - already_spent,
            self.work_model.work(requested) - already_spent,
        )
        debug_print(
            3, f"{self.name}: refined {p} {previous:.3g} -> {achieved:.3g}, work {evaluation.work:.6g}"
        )
        return evaluation
